//! Conforming triangular meshes of the scattering domain.
//!
//! One PARENT mesh covers the whole domain Ω, with the obstacle interfaces
//! present as constrained edge chains and every triangle tagged by the
//! region it lies in (exterior or obstacle component). The exterior submesh
//! used for obstacle solves is extracted from the parent, so the two meshes
//! share nodes, triangles, and boundary discretization index-for-index —
//! the property that makes the discrete energy identity hold to solver
//! precision rather than mesh-convergence precision.

pub mod delaunay;
mod generator;
mod io;

pub use generator::{generate_mesh, MeshParams};
pub use io::{read_mesh, write_mesh};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point2;

/// Region tag of a triangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TriTag {
    /// Inside Ω, outside every obstacle component.
    Exterior,
    /// Inside obstacle component `j`.
    Obstacle(u32),
}

/// Tag of a constrained (tagged) edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EdgeTag {
    /// On the outer boundary ∂Ω.
    Outer,
    /// On the interface ∂D_j of obstacle component `j`.
    Interface(u32),
}

/// A tagged edge, oriented so the EXTERIOR region lies on its left.
/// For interface edges, the left normal of (a → b) is therefore the normal
/// pointing out of the obstacle into the exterior.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaggedEdge {
    pub a: usize,
    pub b: usize,
    pub tag: EdgeTag,
}

/// A conforming triangle mesh with region and interface tags.
#[derive(Debug, Clone)]
pub struct TriMesh {
    pub nodes: Vec<Point2>,
    /// Counter-clockwise vertex triples.
    pub tris: Vec<[usize; 3]>,
    pub tri_tags: Vec<TriTag>,
    /// Constrained edges (∂Ω and all interfaces), exterior-on-left.
    pub edges: Vec<TaggedEdge>,
    /// Sorted node indices lying on ∂Ω.
    pub outer_nodes: Vec<usize>,
    /// Sorted node indices lying on any obstacle interface.
    pub interface_nodes: Vec<usize>,
}

/// A closed boundary loop: cyclically ordered nodes plus cumulative arc
/// length from the first node.
#[derive(Debug, Clone)]
pub struct BoundaryLoop {
    pub nodes: Vec<usize>,
    /// `arc_length[i]` is the polyline distance from `nodes[0]` to
    /// `nodes[i]` along the loop.
    pub arc_length: Vec<f64>,
    /// Full loop perimeter (including the closing segment).
    pub total_length: f64,
}

/// Summary quality numbers for a mesh.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MeshQuality {
    pub n_nodes: usize,
    pub n_tris: usize,
    pub h_max: f64,
    pub h_min: f64,
    pub min_angle_deg: f64,
    pub total_area: f64,
}

impl TriMesh {
    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_tris(&self) -> usize {
        self.tris.len()
    }

    pub fn tri_points(&self, t: usize) -> [Point2; 3] {
        let [a, b, c] = self.tris[t];
        [self.nodes[a], self.nodes[b], self.nodes[c]]
    }

    pub fn tri_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.tri_points(t);
        0.5 * (b - a).cross(c - a)
    }

    pub fn edge_length(&self, e: &TaggedEdge) -> f64 {
        self.nodes[e.a].dist(self.nodes[e.b])
    }

    /// Unit normal of a tagged edge pointing LEFT of (a → b): out of the
    /// obstacle for interface edges, into Ω for outer edges.
    pub fn edge_left_normal(&self, e: &TaggedEdge) -> Point2 {
        let d = self.nodes[e.b] - self.nodes[e.a];
        d.perp().normalize()
    }

    /// Smallest distance between consecutive interface nodes — the local
    /// interface resolution used to keep indicator evaluation points a safe
    /// number of edge lengths away from ∂D.
    pub fn interface_edge_length_range(&self) -> Option<(f64, f64)> {
        let mut lo = f64::INFINITY;
        let mut hi = 0.0f64;
        let mut any = false;
        for e in &self.edges {
            if matches!(e.tag, EdgeTag::Interface(_)) {
                let l = self.edge_length(e);
                lo = lo.min(l);
                hi = hi.max(l);
                any = true;
            }
        }
        any.then_some((lo, hi))
    }

    pub fn quality(&self) -> MeshQuality {
        let mut h_max = 0.0f64;
        let mut h_min = f64::INFINITY;
        let mut min_angle = f64::INFINITY;
        let mut total_area = 0.0;
        for t in 0..self.tris.len() {
            let [pa, pb, pc] = self.tri_points(t);
            let la = pb.dist(pc);
            let lb = pc.dist(pa);
            let lc = pa.dist(pb);
            h_max = h_max.max(la).max(lb).max(lc);
            h_min = h_min.min(la).min(lb).min(lc);
            total_area += self.tri_area(t);
            // Angles via the law of cosines.
            for (opp, u, v) in [(la, lb, lc), (lb, lc, la), (lc, la, lb)] {
                let cosang = ((u * u + v * v - opp * opp) / (2.0 * u * v)).clamp(-1.0, 1.0);
                min_angle = min_angle.min(cosang.acos());
            }
        }
        MeshQuality {
            n_nodes: self.nodes.len(),
            n_tris: self.tris.len(),
            h_max,
            h_min,
            min_angle_deg: min_angle.to_degrees(),
            total_area,
        }
    }

    /// Nodes NOT on the outer boundary, sorted: the unknowns of a Dirichlet
    /// problem.
    pub fn free_nodes(&self) -> Vec<usize> {
        let mut on_outer = vec![false; self.nodes.len()];
        for &i in &self.outer_nodes {
            on_outer[i] = true;
        }
        (0..self.nodes.len()).filter(|&i| !on_outer[i]).collect()
    }

    /// Area of a tagged region (sum of triangle areas).
    pub fn region_area(&self, want: impl Fn(TriTag) -> bool) -> f64 {
        (0..self.tris.len())
            .filter(|&t| want(self.tri_tags[t]))
            .map(|t| self.tri_area(t))
            .sum()
    }

    /// Extract the submesh of triangles selected by `want`, renumbering
    /// nodes in increasing parent order. Returns the submesh and the map
    /// from submesh node index to parent node index.
    pub fn submesh(&self, want: impl Fn(TriTag) -> bool) -> (TriMesh, Vec<usize>) {
        let mut used = vec![false; self.nodes.len()];
        let mut tris = Vec::new();
        let mut tags = Vec::new();
        for t in 0..self.tris.len() {
            if want(self.tri_tags[t]) {
                tris.push(self.tris[t]);
                tags.push(self.tri_tags[t]);
                for &v in &self.tris[t] {
                    used[v] = true;
                }
            }
        }
        let parent_of: Vec<usize> = (0..self.nodes.len()).filter(|&i| used[i]).collect();
        let mut new_of = vec![usize::MAX; self.nodes.len()];
        for (new, &old) in parent_of.iter().enumerate() {
            new_of[old] = new;
        }
        let nodes: Vec<Point2> = parent_of.iter().map(|&i| self.nodes[i]).collect();
        let tris: Vec<[usize; 3]> = tris
            .iter()
            .map(|t| [new_of[t[0]], new_of[t[1]], new_of[t[2]]])
            .collect();
        let edges: Vec<TaggedEdge> = self
            .edges
            .iter()
            .filter(|e| used[e.a] && used[e.b])
            .map(|e| TaggedEdge {
                a: new_of[e.a],
                b: new_of[e.b],
                tag: e.tag,
            })
            .collect();
        let mut sub = TriMesh {
            nodes,
            tris,
            tri_tags: tags,
            edges,
            outer_nodes: vec![],
            interface_nodes: vec![],
        };
        sub.rebuild_node_tag_lists();
        (sub, parent_of)
    }

    /// The exterior computational mesh (Ω minus the obstacle closure),
    /// plus the submesh-to-parent node map.
    pub fn exterior_submesh(&self) -> (TriMesh, Vec<usize>) {
        self.submesh(|t| t == TriTag::Exterior)
    }

    pub(crate) fn rebuild_node_tag_lists(&mut self) {
        let mut outer = Vec::new();
        let mut iface = Vec::new();
        for e in &self.edges {
            match e.tag {
                EdgeTag::Outer => {
                    outer.push(e.a);
                    outer.push(e.b);
                }
                EdgeTag::Interface(_) => {
                    iface.push(e.a);
                    iface.push(e.b);
                }
            }
        }
        outer.sort_unstable();
        outer.dedup();
        iface.sort_unstable();
        iface.dedup();
        self.outer_nodes = outer;
        self.interface_nodes = iface;
    }

    /// Structural sanity: positive CCW areas, tagged edges actually present
    /// in the triangulation with the expected incidence (outer edges border
    /// exactly one triangle; interface edges border one exterior triangle,
    /// and one obstacle triangle when the obstacle region is meshed).
    pub fn check_conforming(&self) -> Result<()> {
        for t in 0..self.tris.len() {
            if self.tri_area(t) <= 0.0 {
                return Err(Error::Mesh(format!(
                    "triangle {t} has non-positive area {}",
                    self.tri_area(t)
                )));
            }
        }
        use std::collections::HashMap;
        let mut edge_tris: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
        for (t, tri) in self.tris.iter().enumerate() {
            for i in 0..3 {
                let a = tri[i];
                let b = tri[(i + 1) % 3];
                let key = (a.min(b), a.max(b));
                edge_tris.entry(key).or_default().push(t);
            }
        }
        let has_obstacle_tris = self
            .tri_tags
            .iter()
            .any(|t| matches!(t, TriTag::Obstacle(_)));
        for e in &self.edges {
            let key = (e.a.min(e.b), e.a.max(e.b));
            let Some(ts) = edge_tris.get(&key) else {
                return Err(Error::Mesh(format!(
                    "tagged edge ({}, {}) is not an edge of the triangulation",
                    e.a, e.b
                )));
            };
            match e.tag {
                EdgeTag::Outer => {
                    if ts.len() != 1 {
                        return Err(Error::Mesh(format!(
                            "outer edge ({}, {}) borders {} triangles",
                            e.a,
                            e.b,
                            ts.len()
                        )));
                    }
                }
                EdgeTag::Interface(j) => {
                    let n_ext = ts
                        .iter()
                        .filter(|&&t| self.tri_tags[t] == TriTag::Exterior)
                        .count();
                    let n_obs = ts
                        .iter()
                        .filter(|&&t| self.tri_tags[t] == TriTag::Obstacle(j))
                        .count();
                    let expected_obs = usize::from(has_obstacle_tris);
                    if n_ext != 1 || n_obs != expected_obs || ts.len() != 1 + expected_obs {
                        return Err(Error::Mesh(format!(
                            "interface edge ({}, {}) has incidence ext={n_ext} obs={n_obs}",
                            e.a, e.b
                        )));
                    }
                }
            }
        }
        // Interior (untagged) edges must be shared by exactly two triangles.
        let tagged: std::collections::HashSet<(usize, usize)> = self
            .edges
            .iter()
            .map(|e| (e.a.min(e.b), e.a.max(e.b)))
            .collect();
        for (key, ts) in &edge_tris {
            if !tagged.contains(key) && ts.len() != 2 {
                return Err(Error::Mesh(format!(
                    "untagged edge {key:?} borders {} triangles (expected 2)",
                    ts.len()
                )));
            }
        }
        Ok(())
    }

    /// Closed boundary loops built from the tagged edges selected by
    /// `want`, each as a cyclically ordered node list with cumulative
    /// arc length (same length as `nodes`; entry 0 is 0).
    ///
    /// Outer loops run counter-clockwise, interface loops clockwise (both
    /// follow the stored exterior-on-left edge orientation).
    pub fn boundary_loops(&self, want: impl Fn(EdgeTag) -> bool) -> Result<Vec<BoundaryLoop>> {
        let selected: Vec<&TaggedEdge> = self.edges.iter().filter(|e| want(e.tag)).collect();
        if selected.is_empty() {
            return Err(Error::Mesh(
                "no boundary edges match the requested tag".into(),
            ));
        }
        let mut succ: std::collections::BTreeMap<usize, usize> = std::collections::BTreeMap::new();
        for e in &selected {
            if succ.insert(e.a, e.b).is_some() {
                return Err(Error::Mesh(format!(
                    "node {} has two outgoing boundary edges",
                    e.a
                )));
            }
        }
        let mut visited: std::collections::BTreeSet<usize> = std::collections::BTreeSet::new();
        let mut loops = Vec::new();
        for e in &selected {
            if visited.contains(&e.a) {
                continue;
            }
            let start = e.a;
            let mut nodes = vec![start];
            let mut arc = vec![0.0f64];
            visited.insert(start);
            let mut cur = start;
            loop {
                let Some(&next) = succ.get(&cur) else {
                    return Err(Error::Mesh(format!(
                        "boundary loop through node {start} is not closed"
                    )));
                };
                let len = self.nodes[cur].dist(self.nodes[next]);
                if next == start {
                    loops.push(BoundaryLoop {
                        nodes,
                        arc_length: arc,
                        total_length: 0.0,
                    });
                    let lp = loops.last_mut().unwrap();
                    lp.total_length = lp.arc_length.last().unwrap() + len;
                    break;
                }
                visited.insert(next);
                arc.push(arc.last().unwrap() + len);
                nodes.push(next);
                cur = next;
            }
        }
        Ok(loops)
    }

    /// Linear-scan point location: triangle containing `p` plus barycentric
    /// coordinates. Adequate for the occasional field evaluation; bulk
    /// work goes through matrices, not point queries.
    pub fn locate(&self, p: Point2) -> Option<(usize, [f64; 3])> {
        for t in 0..self.tris.len() {
            let [a, b, c] = self.tri_points(t);
            let area = (b - a).cross(c - a);
            let wa = (b - p).cross(c - p) / area;
            let wb = (c - p).cross(a - p) / area;
            let wc = (a - p).cross(b - p) / area;
            let eps = -1e-12;
            if wa >= eps && wb >= eps && wc >= eps {
                return Some((t, [wa, wb, wc]));
            }
        }
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{ObstacleComponent, ObstacleSpec, Shape};

    fn small_mesh() -> TriMesh {
        let domain = Shape::disk(0.0, 0.0, 1.0);
        let obstacle = ObstacleSpec {
            components: vec![ObstacleComponent {
                shape: Shape::disk(0.0, 0.0, 0.4),
                lambda_re: 0.0,
                lambda_im: 1.0,
            }],
        };
        generate_mesh(
            &domain,
            &obstacle,
            &MeshParams {
                h: 0.15,
                ..MeshParams::default()
            },
        )
        .unwrap()
    }

    #[test]
    fn parent_mesh_is_conforming_and_covers_disk() {
        let mesh = small_mesh();
        mesh.check_conforming().unwrap();
        let q = mesh.quality();
        // Polygonal approximation of the unit disk: area within ~h².
        assert!((q.total_area - std::f64::consts::PI).abs() < 0.02);
        assert!(q.h_max <= 1.5 * 0.15, "h_max = {}", q.h_max);
        assert!(q.min_angle_deg >= 20.0, "min angle {}", q.min_angle_deg);
    }

    #[test]
    fn region_areas_split_by_tag() {
        let mesh = small_mesh();
        let a_obs = mesh.region_area(|t| matches!(t, TriTag::Obstacle(_)));
        let a_ext = mesh.region_area(|t| t == TriTag::Exterior);
        let pi = std::f64::consts::PI;
        assert!((a_obs - pi * 0.16).abs() < 0.02, "obstacle area {a_obs}");
        assert!((a_ext - pi * 0.84).abs() < 0.03, "exterior area {a_ext}");
    }

    #[test]
    fn exterior_submesh_shares_parent_nodes() {
        let mesh = small_mesh();
        let (sub, parent_of) = mesh.exterior_submesh();
        sub.check_conforming().unwrap();
        assert_eq!(sub.nodes.len(), parent_of.len());
        for (s, &p) in parent_of.iter().enumerate() {
            assert_eq!(sub.nodes[s], mesh.nodes[p]);
        }
        // Same interface discretization in both meshes.
        let sub_iface: Vec<usize> = sub.interface_nodes.iter().map(|&i| parent_of[i]).collect();
        let mut expect = mesh.interface_nodes.clone();
        expect.sort_unstable();
        let mut got = sub_iface;
        got.sort_unstable();
        assert_eq!(got, expect);
        // Submesh has no obstacle triangles.
        assert!(sub.tri_tags.iter().all(|t| *t == TriTag::Exterior));
    }

    #[test]
    fn interface_normals_point_outward_from_obstacle() {
        let mesh = small_mesh();
        for e in &mesh.edges {
            if let EdgeTag::Interface(_) = e.tag {
                let mid = (mesh.nodes[e.a] + mesh.nodes[e.b]) * 0.5;
                let n = mesh.edge_left_normal(e);
                // For the centered disk obstacle, outward-from-D means the
                // normal has positive dot product with the radial direction.
                assert!(
                    n.dot(mid.normalize()) > 0.9,
                    "interface normal {n:?} at {mid:?} not radial-outward"
                );
            }
        }
    }

    #[test]
    fn boundary_loops_are_closed_and_measured() {
        let mesh = small_mesh();
        let outer = mesh.boundary_loops(|t| t == EdgeTag::Outer).unwrap();
        assert_eq!(outer.len(), 1);
        // Inscribed-polygon perimeter of the unit circle, within 2%.
        assert!(
            (outer[0].total_length - 2.0 * std::f64::consts::PI).abs()
                < 0.02 * 2.0 * std::f64::consts::PI
        );
        assert_eq!(outer[0].nodes.len(), outer[0].arc_length.len());
        // Arc length strictly increasing.
        for w in outer[0].arc_length.windows(2) {
            assert!(w[1] > w[0]);
        }
        let iface = mesh
            .boundary_loops(|t| matches!(t, EdgeTag::Interface(_)))
            .unwrap();
        assert_eq!(iface.len(), 1);
        assert!((iface[0].total_length - 2.0 * std::f64::consts::PI * 0.4).abs() < 0.05);
        // No loops for an absent tag.
        let plain = generate_mesh(
            &Shape::disk(0.0, 0.0, 1.0),
            &ObstacleSpec::empty(),
            &MeshParams {
                h: 0.2,
                ..MeshParams::default()
            },
        )
        .unwrap();
        assert!(plain
            .boundary_loops(|t| matches!(t, EdgeTag::Interface(_)))
            .is_err());
    }

    #[test]
    fn outer_normals_point_out_of_domain() {
        let mesh = small_mesh();
        for e in &mesh.edges {
            if e.tag == EdgeTag::Outer {
                let mid = (mesh.nodes[e.a] + mesh.nodes[e.b]) * 0.5;
                // Exterior-region-on-left means the LEFT normal points INTO
                // the domain; the outward normal is its negation.
                let n = mesh.edge_left_normal(e);
                assert!(
                    n.dot(mid.normalize()) < -0.9,
                    "outer left-normal should point inward, got {n:?} at {mid:?}"
                );
            }
        }
    }
}
