//! Mesh generation: boundary polygonalization, hexagonal lattice fill,
//! constrained Delaunay triangulation, region tagging, and quality control.

use crate::error::{Error, Result};
use crate::geometry::{point_in_loop, ObstacleSpec, Point2, Shape};
use crate::mesh::delaunay::Triangulation;
use crate::mesh::{EdgeTag, TaggedEdge, TriMesh, TriTag};

/// Mesh generation parameters.
#[derive(Debug, Clone)]
pub struct MeshParams {
    /// Target edge length.
    pub h: f64,
    /// Obstacle interfaces are polygonalized at `h / interface_refine`;
    /// values > 1 resolve the interface finer than the bulk.
    pub interface_refine: f64,
    /// Reject the mesh if the minimum triangle angle (after smoothing)
    /// falls below this.
    pub min_angle_deg: f64,
    /// Reject the mesh if any edge exceeds `h_max_factor · h`.
    pub h_max_factor: f64,
}

impl Default for MeshParams {
    fn default() -> Self {
        MeshParams {
            h: 0.05,
            interface_refine: 1.0,
            min_angle_deg: 20.0,
            h_max_factor: 1.5,
        }
    }
}

/// Fraction of the local segment length within which lattice points are
/// culled. Anything ≥ 0.5 keeps every constrained segment's diametral disk
/// point-free (the Gabriel property — each disk point lies within half the
/// segment length of the segment), so the Delaunay triangulation contains
/// the segments without recovery flips; keeping the factor close to that
/// bound limits how wide a gap opens up behind the boundary.
const CULL_FACTOR: f64 = 0.6;

struct Loop {
    points: Vec<Point2>,
    tag: EdgeTag,
}

/// Generate the parent mesh of Ω with all obstacle interfaces constrained
/// and regions tagged. The obstacle may be empty.
pub fn generate_mesh(
    domain: &Shape,
    obstacle: &ObstacleSpec,
    params: &MeshParams,
) -> Result<TriMesh> {
    if !(params.h > 0.0) {
        return Err(Error::Config(format!("mesh h must be positive, got {}", params.h)));
    }
    if !(params.interface_refine >= 1.0) {
        return Err(Error::Config(format!(
            "interface_refine must be ≥ 1, got {}",
            params.interface_refine
        )));
    }
    domain.validate()?;

    // 1. Boundary loops.
    let mut loops = vec![Loop {
        points: domain.polygonalize(params.h),
        tag: EdgeTag::Outer,
    }];
    let h_iface = params.h / params.interface_refine;
    for (j, comp) in obstacle.components.iter().enumerate() {
        loops.push(Loop {
            points: comp.shape.polygonalize(h_iface),
            tag: EdgeTag::Interface(j as u32),
        });
    }

    // 2. Loop points (stable order) and the constrained segments over them.
    let mut loop_points: Vec<Point2> = Vec::new();
    let mut segments: Vec<(usize, usize, EdgeTag)> = Vec::new();
    for lp in &loops {
        let base = loop_points.len();
        let n = lp.points.len();
        loop_points.extend_from_slice(&lp.points);
        for i in 0..n {
            segments.push((base + i, base + (i + 1) % n, lp.tag));
        }
    }
    let outer_loop = &loops[0].points;
    let seg_geoms: Vec<(Point2, Point2, f64)> = segments
        .iter()
        .map(|&(a, b, _)| {
            let pa = loop_points[a];
            let pb = loop_points[b];
            (pa, pb, pa.dist(pb))
        })
        .collect();

    // 3. Hexagonal lattice over the bounding box, culled near constrained
    //    segments (distance < CULL_FACTOR · segment length) and outside Ω.
    let (min, max) = bounding_box(outer_loop);
    let dy = params.h * 3f64.sqrt() / 2.0;
    let n_rows = ((max.y - min.y) / dy).ceil() as i64 + 1;
    let n_cols = ((max.x - min.x) / params.h).ceil() as i64 + 1;
    let mut lattice: Vec<Point2> = Vec::new();
    for row in 0..=n_rows {
        let y = min.y + row as f64 * dy;
        let x_off = if row % 2 == 1 { 0.5 * params.h } else { 0.0 };
        for col in 0..=n_cols {
            let p = Point2::new(min.x + x_off + col as f64 * params.h, y);
            if !point_in_loop(outer_loop, p) {
                continue;
            }
            let mut keep = true;
            for &(a, b, len) in &seg_geoms {
                if dist_point_segment(p, a, b) < CULL_FACTOR * len {
                    keep = false;
                    break;
                }
            }
            if keep {
                lattice.push(p);
            }
        }
    }

    // 4.–8. Triangulate, tag, smooth, and gate. Where the lattice phase or a
    // small region leaves an over-long edge even after smoothing, insert the
    // midpoints of the offenders and rebuild — a couple of passes settles it.
    let gate = params.h_max_factor * params.h;
    let mut extra: Vec<Point2> = Vec::new();
    for attempt in 0..4 {
        let mut points = loop_points.clone();
        points.extend_from_slice(&lattice);
        points.extend_from_slice(&extra);
        let mut mesh = triangulate_and_tag(&points, &segments, &loops)?;

        // The culled band next to constrained loops leaves the first lattice
        // row up to ~1.5h out, so always relax the interior: damped Laplacian
        // sweeps spread that deficit over several rows while every node on a
        // tagged edge stays fixed (hence region areas and tags are untouched).
        let fixed = fixed_node_mask(&mesh);
        laplacian_smooth(&mut mesh, &fixed, 16, 0.7);

        let q = mesh.quality();
        let angle_ok = q.min_angle_deg >= params.min_angle_deg;
        let h_ok = q.h_max <= gate;
        if angle_ok && h_ok {
            return Ok(mesh);
        }
        if !angle_ok {
            return Err(Error::Mesh(format!(
                "mesh quality gate: min angle {:.2}° < {:.1}° (h = {})",
                q.min_angle_deg, params.min_angle_deg, params.h
            )));
        }
        if attempt == 3 {
            return Err(Error::Mesh(format!(
                "mesh quality gate: h_max {:.4} exceeds {} · h = {:.4} after edge splitting",
                q.h_max, params.h_max_factor, gate
            )));
        }
        let mut seen: std::collections::BTreeSet<(usize, usize)> = std::collections::BTreeSet::new();
        let mut added = false;
        for t in &mesh.tris {
            for i in 0..3 {
                let (a, b) = (t[i], t[(i + 1) % 3]);
                let key = (a.min(b), a.max(b));
                if mesh.nodes[a].dist(mesh.nodes[b]) <= gate || !seen.insert(key) {
                    continue;
                }
                let mid = (mesh.nodes[a] + mesh.nodes[b]) * 0.5;
                // Never compromise the Gabriel bound of a constrained
                // segment, and stay inside the domain polygon.
                let safe = point_in_loop(outer_loop, mid)
                    && seg_geoms
                        .iter()
                        .all(|&(sa, sb, len)| dist_point_segment(mid, sa, sb) >= 0.5 * len);
                if safe {
                    extra.push(mid);
                    added = true;
                }
            }
        }
        if !added {
            return Err(Error::Mesh(format!(
                "mesh quality gate: h_max {:.4} exceeds {:.4} and no admissible split point",
                q.h_max, gate
            )));
        }
    }
    unreachable!("edge-split loop returns or errors within four attempts")
}

/// Constrained Delaunay triangulation of `points`, region classification by
/// loop membership of triangle centroids, pruning of unused fill points, and
/// assembly of the tagged-edge lists.
fn triangulate_and_tag(
    points: &[Point2],
    segments: &[(usize, usize, EdgeTag)],
    loops: &[Loop],
) -> Result<TriMesh> {
    let outer_loop = &loops[0].points;
    let plain_segments: Vec<(usize, usize)> = segments.iter().map(|&(a, b, _)| (a, b)).collect();
    let tri = Triangulation::build(points, &plain_segments)?;
    let raw_tris = tri.real_triangles();

    // Keep triangles inside Ω (centroid test against the polygonal outer
    // loop — the PSLG is ground truth, not the analytic curve) and tag by
    // obstacle loop membership.
    let obstacle_loops: Vec<&Vec<Point2>> = loops[1..].iter().map(|l| &l.points).collect();
    let mut kept_tris: Vec<[usize; 3]> = Vec::new();
    let mut tags: Vec<TriTag> = Vec::new();
    for t in &raw_tris {
        let c = (points[t[0]] + points[t[1]] + points[t[2]]) * (1.0 / 3.0);
        if !point_in_loop(outer_loop, c) {
            continue;
        }
        let mut tag = TriTag::Exterior;
        for (j, lp) in obstacle_loops.iter().enumerate() {
            if point_in_loop(lp, c) {
                tag = TriTag::Obstacle(j as u32);
                break;
            }
        }
        kept_tris.push(*t);
        tags.push(tag);
    }

    // Prune unused points, preserving order.
    let mut used = vec![false; points.len()];
    for t in &kept_tris {
        for &v in t {
            used[v] = true;
        }
    }
    // All loop points must survive; an unused loop point means the
    // triangulation failed to respect the boundary.
    let n_loop_points: usize = loops.iter().map(|l| l.points.len()).sum();
    for (i, &u) in used.iter().enumerate().take(n_loop_points) {
        if !u {
            return Err(Error::Mesh(format!(
                "boundary point {i} unused by the triangulation"
            )));
        }
    }
    let mut new_of = vec![usize::MAX; points.len()];
    let mut nodes = Vec::new();
    for (i, &u) in used.iter().enumerate() {
        if u {
            new_of[i] = nodes.len();
            nodes.push(points[i]);
        }
    }
    let tris: Vec<[usize; 3]> = kept_tris
        .iter()
        .map(|t| [new_of[t[0]], new_of[t[1]], new_of[t[2]]])
        .collect();

    // Tagged edges. The outer loop runs CCW (domain on the left). Obstacle
    // loops are generated CCW around D, so the exterior lies on the RIGHT;
    // store them reversed to keep the exterior on the left.
    let mut edges = Vec::new();
    for &(a, b, tag) in segments {
        let (a, b) = match tag {
            EdgeTag::Outer => (new_of[a], new_of[b]),
            EdgeTag::Interface(_) => (new_of[b], new_of[a]),
        };
        edges.push(TaggedEdge { a, b, tag });
    }

    let mut mesh = TriMesh {
        nodes,
        tris,
        tri_tags: tags,
        edges,
        outer_nodes: vec![],
        interface_nodes: vec![],
    };
    mesh.rebuild_node_tag_lists();
    mesh.check_conforming()?;
    Ok(mesh)
}

fn bounding_box(pts: &[Point2]) -> (Point2, Point2) {
    let mut min = Point2::new(f64::INFINITY, f64::INFINITY);
    let mut max = Point2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in pts {
        min.x = min.x.min(p.x);
        min.y = min.y.min(p.y);
        max.x = max.x.max(p.x);
        max.y = max.y.max(p.y);
    }
    (min, max)
}

fn dist_point_segment(p: Point2, a: Point2, b: Point2) -> f64 {
    let d = b - a;
    let l2 = d.norm2();
    if l2 == 0.0 {
        return p.dist(a);
    }
    let t = ((p - a).dot(d) / l2).clamp(0.0, 1.0);
    p.dist(a + d * t)
}

/// Nodes that must not move during smoothing: everything on a tagged edge.
fn fixed_node_mask(mesh: &TriMesh) -> Vec<bool> {
    let mut fixed = vec![false; mesh.nodes.len()];
    for e in &mesh.edges {
        fixed[e.a] = true;
        fixed[e.b] = true;
    }
    fixed
}

/// Damped Laplacian smoothing of non-fixed nodes (each sweep moves a node a
/// `damping` fraction of the way toward its neighbor centroid); reverts a
/// sweep if it inverts any triangle.
fn laplacian_smooth(mesh: &mut TriMesh, fixed: &[bool], sweeps: usize, damping: f64) {
    let n = mesh.nodes.len();
    let mut neighbors: Vec<Vec<usize>> = vec![Vec::new(); n];
    for t in &mesh.tris {
        for i in 0..3 {
            let a = t[i];
            let b = t[(i + 1) % 3];
            neighbors[a].push(b);
            neighbors[b].push(a);
        }
    }
    for nbrs in &mut neighbors {
        nbrs.sort_unstable();
        nbrs.dedup();
    }
    for _ in 0..sweeps {
        let snapshot = mesh.nodes.clone();
        for i in 0..n {
            if fixed[i] || neighbors[i].is_empty() {
                continue;
            }
            let mut acc = Point2::new(0.0, 0.0);
            for &j in &neighbors[i] {
                acc = acc + snapshot[j];
            }
            let target = acc * (1.0 / neighbors[i].len() as f64);
            mesh.nodes[i] = snapshot[i] + (target - snapshot[i]) * damping;
        }
        let inverted = (0..mesh.tris.len()).any(|t| mesh.tri_area(t) <= 0.0);
        if inverted {
            mesh.nodes = snapshot;
            return;
        }
    }
}
