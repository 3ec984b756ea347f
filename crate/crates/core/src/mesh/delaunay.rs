//! Incremental Delaunay triangulation with constrained-edge recovery.
//!
//! Flip-based Lawson insertion inside a super-triangle, with exact geometric
//! predicates (Shewchuk-style, via the `robust` crate) so that the heavily
//! cocircular point sets produced by lattice sampling are handled
//! deterministically: an exactly cocircular quad simply keeps the diagonal
//! chosen by insertion order, and points landing exactly on an existing edge
//! take the two-triangle split path.

use robust::{incircle, orient2d, Coord};

use crate::error::{Error, Result};
use crate::geometry::Point2;

fn coord(p: Point2) -> Coord<f64> {
    Coord { x: p.x, y: p.y }
}

#[derive(Debug, Clone)]
struct Tri {
    /// Vertices in counter-clockwise order.
    v: [usize; 3],
    /// `adj[i]` is the triangle across the edge opposite `v[i]`.
    adj: [Option<usize>; 3],
    alive: bool,
}

/// Where a query point landed during location.
enum Location {
    Inside(usize),
    /// `(triangle, i)`: on the open edge opposite local vertex `i`.
    OnEdge(usize, usize),
    OnVertex(usize),
}

/// A growing triangulation over a fixed point set.
pub struct Triangulation {
    pub points: Vec<Point2>,
    tris: Vec<Tri>,
    /// Indices of the three super-triangle vertices (appended after the
    /// real points).
    super_vertices: [usize; 3],
    /// Walk hint: the most recently created triangle.
    hint: usize,
}

impl Triangulation {
    /// Triangulate `points` (inserted in the given order) and then recover
    /// the constrained `segments` (pairs of point indices) by edge flipping.
    pub fn build(points: &[Point2], segments: &[(usize, usize)]) -> Result<Triangulation> {
        if points.len() < 3 {
            return Err(Error::Mesh(format!(
                "need at least 3 points, got {}",
                points.len()
            )));
        }
        let mut min = Point2::new(f64::INFINITY, f64::INFINITY);
        let mut max = Point2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in points {
            min.x = min.x.min(p.x);
            min.y = min.y.min(p.y);
            max.x = max.x.max(p.x);
            max.y = max.y.max(p.y);
        }
        let span = (max.x - min.x).max(max.y - min.y).max(1e-6);
        let c = Point2::new(0.5 * (min.x + max.x), 0.5 * (min.y + max.y));
        // A triangle comfortably containing everything.
        let r = 20.0 * span;
        let mut all = points.to_vec();
        let s0 = all.len();
        all.push(Point2::new(c.x - 2.0 * r, c.y - r));
        all.push(Point2::new(c.x + 2.0 * r, c.y - r));
        all.push(Point2::new(c.x, c.y + 2.0 * r));
        let mut t = Triangulation {
            points: all,
            tris: vec![Tri {
                v: [s0, s0 + 1, s0 + 2],
                adj: [None, None, None],
                alive: true,
            }],
            super_vertices: [s0, s0 + 1, s0 + 2],
            hint: 0,
        };
        for i in 0..s0 {
            t.insert(i)?;
        }
        for &(a, b) in segments {
            t.recover_edge(a, b)?;
        }
        Ok(t)
    }

    fn p(&self, i: usize) -> Point2 {
        self.points[i]
    }

    fn orient(&self, a: usize, b: usize, c: usize) -> f64 {
        orient2d(coord(self.p(a)), coord(self.p(b)), coord(self.p(c)))
    }

    /// Walk from the hint to the triangle containing `p` (point index `pi`).
    fn locate(&self, pi: usize) -> Result<Location> {
        let target = self.p(pi);
        let mut t = self.hint;
        if !self.tris[t].alive {
            t = self
                .tris
                .iter()
                .position(|x| x.alive)
                .ok_or_else(|| Error::Mesh("triangulation has no triangles".into()))?;
        }
        let max_steps = 4 * self.tris.len() + 64;
        let mut steps = 0;
        'walk: loop {
            steps += 1;
            if steps > max_steps {
                // Deterministic fallback: linear scan.
                for (ti, tri) in self.tris.iter().enumerate() {
                    if !tri.alive {
                        continue;
                    }
                    if let Some(loc) = self.classify_in_triangle(ti, pi) {
                        return Ok(loc);
                    }
                }
                return Err(Error::Mesh(format!(
                    "point ({:.6}, {:.6}) not located in triangulation",
                    target.x, target.y
                )));
            }
            let tri = &self.tris[t];
            for i in 0..3 {
                let a = tri.v[(i + 1) % 3];
                let b = tri.v[(i + 2) % 3];
                if self.orient(a, b, pi) < 0.0 {
                    match tri.adj[i] {
                        Some(n) => {
                            t = n;
                            continue 'walk;
                        }
                        None => {
                            return Err(Error::Mesh(format!(
                                "point ({:.6}, {:.6}) escaped the super-triangle",
                                target.x, target.y
                            )));
                        }
                    }
                }
            }
            return self.classify_in_triangle(t, pi).ok_or_else(|| {
                Error::Mesh("triangle classification failed after walk".into())
            });
        }
    }

    /// For a point known to satisfy `orient ≥ 0` against all edges of `t`,
    /// decide inside / on-edge / on-vertex. Returns None if actually outside.
    fn classify_in_triangle(&self, t: usize, pi: usize) -> Option<Location> {
        let tri = &self.tris[t];
        let mut zero_edges = [false; 3];
        for i in 0..3 {
            let a = tri.v[(i + 1) % 3];
            let b = tri.v[(i + 2) % 3];
            let o = self.orient(a, b, pi);
            if o < 0.0 {
                return None;
            }
            if o == 0.0 {
                zero_edges[i] = true;
            }
        }
        let zeros = zero_edges.iter().filter(|z| **z).count();
        match zeros {
            0 => Some(Location::Inside(t)),
            1 => {
                let i = zero_edges.iter().position(|z| *z).unwrap();
                Some(Location::OnEdge(t, i))
            }
            _ => {
                // On two edge lines simultaneously: coincides with a vertex.
                let i = (0..3)
                    .find(|&i| !zero_edges[i])
                    .unwrap_or(0);
                Some(Location::OnVertex(tri.v[i]))
            }
        }
    }

    fn set_adj(&mut self, t: usize, i: usize, n: Option<usize>) {
        self.tris[t].adj[i] = n;
    }

    /// In triangle `of`, replace the neighbor `old` with `new`.
    fn replace_neighbor(&mut self, of: Option<usize>, old: usize, new: usize) {
        if let Some(of) = of {
            for i in 0..3 {
                if self.tris[of].adj[i] == Some(old) {
                    self.tris[of].adj[i] = Some(new);
                    return;
                }
            }
            unreachable!("adjacency back-pointer missing");
        }
    }

    fn local_index(&self, t: usize, v: usize) -> usize {
        self.tris[t]
            .v
            .iter()
            .position(|&x| x == v)
            .expect("vertex not in triangle")
    }

    fn opposite_index(&self, o: usize, t: usize) -> usize {
        self.tris[o]
            .adj
            .iter()
            .position(|&x| x == Some(t))
            .expect("triangles not adjacent")
    }

    fn insert(&mut self, pi: usize) -> Result<()> {
        match self.locate(pi)? {
            Location::OnVertex(v) => Err(Error::Mesh(format!(
                "duplicate point: index {pi} coincides with existing vertex {v}"
            ))),
            Location::Inside(t) => {
                self.split_one_to_three(t, pi);
                Ok(())
            }
            Location::OnEdge(t, i) => {
                self.split_edge(t, i, pi)?;
                Ok(())
            }
        }
    }

    /// Replace `t = (v0, v1, v2)` by three triangles around interior `p`.
    fn split_one_to_three(&mut self, t: usize, p: usize) {
        let [v0, v1, v2] = self.tris[t].v;
        let [a0, a1, a2] = self.tris[t].adj;
        let t0 = t; // reuse slot: (p, v1, v2)
        let t1 = self.tris.len();
        let t2 = self.tris.len() + 1;
        self.tris[t0] = Tri {
            v: [p, v1, v2],
            adj: [a0, Some(t1), Some(t2)],
            alive: true,
        };
        self.tris.push(Tri {
            v: [p, v2, v0],
            adj: [a1, Some(t2), Some(t0)],
            alive: true,
        });
        self.tris.push(Tri {
            v: [p, v0, v1],
            adj: [a2, Some(t0), Some(t1)],
            alive: true,
        });
        // a0 keeps pointing at t0; fix the other externals.
        self.replace_neighbor(a1, t, t1);
        self.replace_neighbor(a2, t, t2);
        self.hint = t0;
        self.legalize(t0, 0, p);
        self.legalize(t1, 0, p);
        self.legalize(t2, 0, p);
    }

    /// Split the edge opposite `t.v[i]` (shared with a neighbor or on the
    /// hull) at point `p` lying exactly on it.
    fn split_edge(&mut self, t: usize, i: usize, p: usize) -> Result<()> {
        let vi = self.tris[t].v[i];
        let u = self.tris[t].v[(i + 1) % 3];
        let w = self.tris[t].v[(i + 2) % 3];
        let o = self.tris[t].adj[i];
        // Neighbors of t across (vi,u) [opposite w] and (w,vi) [opposite u].
        let t_adj_w = self.tris[t].adj[(i + 2) % 3];
        let t_adj_u = self.tris[t].adj[(i + 1) % 3];
        let t1 = t; // (vi, u, p)
        let t2 = self.tris.len();
        self.tris[t1] = Tri {
            v: [vi, u, p],
            adj: [None, None, t_adj_w],
            alive: true,
        };
        self.tris.push(Tri {
            v: [vi, p, w],
            adj: [None, t_adj_u, Some(t1)],
            alive: true,
        });
        self.set_adj(t1, 1, Some(t2)); // across (vi? ) — edge (p,vi)... (opp u) shared with t2
        self.replace_neighbor(t_adj_u, t, t2);
        match o {
            None => {
                // Hull edge: nothing on the other side.
                self.set_adj(t1, 0, None);
                self.set_adj(t2, 0, None);
                self.hint = t1;
                self.legalize(t1, 2, p);
                self.legalize(t2, 1, p);
            }
            Some(o) => {
                let j = self.opposite_index(o, t);
                let q = self.tris[o].v[j];
                // o contains directed edge (w, u); its other neighbors:
                let ju = self.local_index(o, u);
                let jw = self.local_index(o, w);
                let o_adj_u = self.tris[o].adj[ju]; // across edge (w/q side) opposite u
                let o_adj_w = self.tris[o].adj[jw];
                let o1 = o; // (q, w, p)
                let o2 = self.tris.len();
                self.tris[o1] = Tri {
                    v: [q, w, p],
                    adj: [Some(t2), Some(o2), o_adj_u],
                    alive: true,
                };
                self.tris.push(Tri {
                    v: [q, p, u],
                    adj: [Some(t1), o_adj_w, Some(o1)],
                    alive: true,
                });
                self.replace_neighbor(o_adj_w, o, o2);
                // Cross links t1<->o2, t2<->o1.
                self.set_adj(t1, 0, Some(o2));
                self.set_adj(t2, 0, Some(o1));
                self.hint = t1;
                self.legalize(t1, 2, p);
                self.legalize(t2, 1, p);
                self.legalize(o1, 2, p);
                self.legalize(o2, 1, p);
            }
        }
        Ok(())
    }

    /// Lawson legalization of the edge opposite `t.v[ip] == p`, recursing
    /// through an explicit stack.
    fn legalize(&mut self, t0: usize, ip0: usize, p: usize) {
        let mut stack = vec![(t0, ip0)];
        while let Some((t, mut ip)) = stack.pop() {
            if !self.tris[t].alive {
                continue;
            }
            // The triangle may have rotated in a previous flip; re-find p.
            if self.tris[t].v[ip] != p {
                match self.tris[t].v.iter().position(|&v| v == p) {
                    Some(k) => ip = k,
                    None => continue,
                }
            }
            let Some(o) = self.tris[t].adj[ip] else {
                continue;
            };
            let j = self.opposite_index(o, t);
            let q = self.tris[o].v[j];
            let [v0, v1, v2] = self.tris[t].v;
            let ic = incircle(
                coord(self.p(v0)),
                coord(self.p(v1)),
                coord(self.p(v2)),
                coord(self.p(q)),
            );
            if ic > 0.0 {
                let (nt, no) = self.flip(t, ip);
                // Both new triangles contain p; legalize their edges
                // opposite p.
                stack.push((nt, self.local_index(nt, p)));
                stack.push((no, self.local_index(no, p)));
            }
        }
    }

    /// Flip the edge opposite `t.v[i]`; returns the two updated triangle
    /// slots, both containing `t.v[i]`.
    fn flip(&mut self, t: usize, i: usize) -> (usize, usize) {
        let o = self.tris[t].adj[i].expect("flip on boundary edge");
        let j = self.opposite_index(o, t);
        let p = self.tris[t].v[i];
        let a = self.tris[t].v[(i + 1) % 3];
        let b = self.tris[t].v[(i + 2) % 3];
        let q = self.tris[o].v[j];
        // External neighbors.
        let t_adj_b = self.tris[t].adj[(i + 2) % 3]; // across (p, a)
        let t_adj_a = self.tris[t].adj[(i + 1) % 3]; // across (b, p)
        let ja = self.local_index(o, a);
        let jb = self.local_index(o, b);
        let o_adj_a = self.tris[o].adj[ja]; // across (b, q) side... edge opposite a
        let o_adj_b = self.tris[o].adj[jb]; // edge opposite b = (a, q) side
        // New triangles: t' = (p, a, q), o' = (p, q, b).
        self.tris[t] = Tri {
            v: [p, a, q],
            adj: [o_adj_b, Some(o), t_adj_b],
            alive: true,
        };
        self.tris[o] = Tri {
            v: [p, q, b],
            adj: [o_adj_a, t_adj_a, Some(t)],
            alive: true,
        };
        self.replace_neighbor(o_adj_b, o, t);
        self.replace_neighbor(t_adj_a, t, o);
        // t_adj_b still points at t; o_adj_a still points at o. Fix their
        // reverse pointers only when the owner changed (done above).
        (t, o)
    }

    /// True if the undirected edge (a, b) exists.
    fn edge_exists(&self, a: usize, b: usize) -> bool {
        self.find_edge(a, b).is_some()
    }

    /// Find a triangle containing directed or undirected edge (a, b).
    fn find_edge(&self, a: usize, b: usize) -> Option<usize> {
        for (ti, tri) in self.tris.iter().enumerate() {
            if !tri.alive {
                continue;
            }
            if tri.v.contains(&a) && tri.v.contains(&b) {
                return Some(ti);
            }
        }
        None
    }

    /// Make the segment (a, b) an edge of the triangulation by flipping the
    /// edges that cross it. The generator culls lattice points near
    /// constrained segments, so in practice this is a no-op safety net.
    fn recover_edge(&mut self, a: usize, b: usize) -> Result<()> {
        let cap = 8 * self.tris.len() + 64;
        for _ in 0..cap {
            if self.edge_exists(a, b) {
                return Ok(());
            }
            // Find any edge strictly crossing segment (a, b) and flip it.
            let mut flipped = false;
            'scan: for t in 0..self.tris.len() {
                if !self.tris[t].alive {
                    continue;
                }
                for i in 0..3 {
                    let u = self.tris[t].v[(i + 1) % 3];
                    let w = self.tris[t].v[(i + 2) % 3];
                    if u == a || u == b || w == a || w == b {
                        continue;
                    }
                    let o1 = self.orient(a, b, u);
                    let o2 = self.orient(a, b, w);
                    let o3 = self.orient(u, w, a);
                    let o4 = self.orient(u, w, b);
                    let crosses =
                        (o1 > 0.0) != (o2 > 0.0) && (o3 > 0.0) != (o4 > 0.0) && o1 != 0.0
                            && o2 != 0.0
                            && o3 != 0.0
                            && o4 != 0.0;
                    if !crosses {
                        continue;
                    }
                    // Flip only if the union quad is strictly convex, i.e.
                    // the two apexes lie on opposite sides of (u, w) and the
                    // new diagonal would cross (u, w).
                    let Some(o) = self.tris[t].adj[i] else {
                        continue;
                    };
                    let j = self.opposite_index(o, t);
                    let p = self.tris[t].v[i];
                    let q = self.tris[o].v[j];
                    let c1 = self.orient(p, q, u);
                    let c2 = self.orient(p, q, w);
                    if (c1 > 0.0) == (c2 > 0.0) {
                        continue; // non-convex quad; try another crossing edge
                    }
                    self.flip(t, i);
                    flipped = true;
                    break 'scan;
                }
            }
            if !flipped {
                return Err(Error::Mesh(format!(
                    "cannot recover constrained edge ({a}, {b}): no flippable crossing edge"
                )));
            }
        }
        Err(Error::Mesh(format!(
            "edge recovery for ({a}, {b}) did not terminate"
        )))
    }

    /// Export alive triangles that contain no super-triangle vertex, as CCW
    /// vertex index triples into the ORIGINAL point array.
    pub fn real_triangles(&self) -> Vec<[usize; 3]> {
        let sv = self.super_vertices;
        let mut out = Vec::new();
        for tri in &self.tris {
            if !tri.alive {
                continue;
            }
            if tri.v.iter().any(|v| sv.contains(v)) {
                continue;
            }
            out.push(tri.v);
        }
        out
    }

    /// Verify the Delaunay property over non-constrained edges and the
    /// structural invariants (adjacency symmetry, CCW orientation).
    /// Intended for tests; O(T²) edge checks are avoided — only local ones.
    pub fn check_invariants(&self) -> Result<()> {
        for (ti, tri) in self.tris.iter().enumerate() {
            if !tri.alive {
                continue;
            }
            if self.orient(tri.v[0], tri.v[1], tri.v[2]) <= 0.0 {
                return Err(Error::Mesh(format!("triangle {ti} not CCW")));
            }
            for i in 0..3 {
                if let Some(o) = tri.adj[i] {
                    if !self.tris[o].alive {
                        return Err(Error::Mesh(format!("triangle {ti} adjacent to dead {o}")));
                    }
                    if !self.tris[o].adj.contains(&Some(ti)) {
                        return Err(Error::Mesh(format!(
                            "adjacency between {ti} and {o} not symmetric"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}
