//! Plain-text mesh serialization.
//!
//! Format (0-based IDs, whitespace-separated):
//! ```text
//! NODES <n>
//! <id> <x> <y>
//! TRIANGLES <m>
//! <id> <a> <b> <c> <tag>        tag: "ext" | "obs<j>"
//! EDGES <k>
//! <a> <b> <tag>                 tag: "outer" | "iface<j>"
//! ```
//! Coordinates are written with 17 significant digits so a write/read
//! round-trip reproduces every node bit-for-bit.

use std::io::{BufRead, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::Point2;
use crate::mesh::{EdgeTag, TaggedEdge, TriMesh, TriTag};

pub fn write_mesh(mesh: &TriMesh, path: &Path) -> Result<()> {
    let mut out = Vec::new();
    writeln!(out, "NODES {}", mesh.nodes.len()).unwrap();
    for (i, p) in mesh.nodes.iter().enumerate() {
        writeln!(out, "{i} {:.17e} {:.17e}", p.x, p.y).unwrap();
    }
    writeln!(out, "TRIANGLES {}", mesh.tris.len()).unwrap();
    for (i, t) in mesh.tris.iter().enumerate() {
        let tag = match mesh.tri_tags[i] {
            TriTag::Exterior => "ext".to_string(),
            TriTag::Obstacle(j) => format!("obs{j}"),
        };
        writeln!(out, "{i} {} {} {} {tag}", t[0], t[1], t[2]).unwrap();
    }
    writeln!(out, "EDGES {}", mesh.edges.len()).unwrap();
    for e in &mesh.edges {
        let tag = match e.tag {
            EdgeTag::Outer => "outer".to_string(),
            EdgeTag::Interface(j) => format!("iface{j}"),
        };
        writeln!(out, "{} {} {tag}", e.a, e.b).unwrap();
    }
    std::fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn read_mesh(path: &Path) -> Result<TriMesh> {
    let file =
        std::fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let reader = std::io::BufReader::new(file);
    let mut lines = reader.lines().enumerate();

    let parse_err = |line: usize, msg: String| Error::Parse {
        path: path.display().to_string(),
        line: line + 1,
        message: msg,
    };

    let mut next_line = |expect: &str| -> Result<(usize, String)> {
        loop {
            match lines.next() {
                Some((n, Ok(l))) => {
                    let t = l.trim().to_string();
                    if !t.is_empty() {
                        return Ok((n, t));
                    }
                }
                Some((n, Err(e))) => {
                    return Err(Error::Parse {
                        path: path.display().to_string(),
                        line: n + 1,
                        message: format!("read error: {e}"),
                    })
                }
                None => {
                    return Err(Error::Parse {
                        path: path.display().to_string(),
                        line: 0,
                        message: format!("unexpected end of file, expected {expect}"),
                    })
                }
            }
        }
    };

    let section = |line: usize, text: &str, name: &str| -> Result<usize> {
        let mut it = text.split_whitespace();
        match (it.next(), it.next(), it.next()) {
            (Some(head), Some(count), None) if head == name => {
                count.parse::<usize>().map_err(|e| {
                    parse_err(line, format!("bad {name} count {count:?}: {e}"))
                })
            }
            _ => Err(parse_err(line, format!("expected `{name} <count>`, got {text:?}"))),
        }
    };

    let (ln, header) = next_line("NODES")?;
    let n_nodes = section(ln, &header, "NODES")?;
    let mut nodes = Vec::with_capacity(n_nodes);
    for want in 0..n_nodes {
        let (ln, text) = next_line("node row")?;
        let mut it = text.split_whitespace();
        let id: usize = it
            .next()
            .ok_or_else(|| parse_err(ln, "missing node id".into()))?
            .parse()
            .map_err(|e| parse_err(ln, format!("bad node id: {e}")))?;
        if id != want {
            return Err(parse_err(ln, format!("node ids must be dense; expected {want}, got {id}")));
        }
        let x: f64 = it
            .next()
            .ok_or_else(|| parse_err(ln, "missing x".into()))?
            .parse()
            .map_err(|e| parse_err(ln, format!("bad x: {e}")))?;
        let y: f64 = it
            .next()
            .ok_or_else(|| parse_err(ln, "missing y".into()))?
            .parse()
            .map_err(|e| parse_err(ln, format!("bad y: {e}")))?;
        nodes.push(Point2::new(x, y));
    }

    let (ln, header) = next_line("TRIANGLES")?;
    let n_tris = section(ln, &header, "TRIANGLES")?;
    let mut tris = Vec::with_capacity(n_tris);
    let mut tri_tags = Vec::with_capacity(n_tris);
    for want in 0..n_tris {
        let (ln, text) = next_line("triangle row")?;
        let mut it = text.split_whitespace();
        let id: usize = it
            .next()
            .ok_or_else(|| parse_err(ln, "missing triangle id".into()))?
            .parse()
            .map_err(|e| parse_err(ln, format!("bad triangle id: {e}")))?;
        if id != want {
            return Err(parse_err(ln, format!("triangle ids must be dense; expected {want}, got {id}")));
        }
        let mut idx = [0usize; 3];
        for slot in &mut idx {
            *slot = it
                .next()
                .ok_or_else(|| parse_err(ln, "missing vertex index".into()))?
                .parse()
                .map_err(|e| parse_err(ln, format!("bad vertex index: {e}")))?;
            if *slot >= n_nodes {
                return Err(parse_err(ln, format!("vertex index {slot} out of range")));
            }
        }
        let tag_text = it
            .next()
            .ok_or_else(|| parse_err(ln, "missing triangle tag".into()))?;
        let tag = parse_tri_tag(tag_text).ok_or_else(|| {
            parse_err(ln, format!("bad triangle tag {tag_text:?} (want ext|obs<j>)"))
        })?;
        tris.push(idx);
        tri_tags.push(tag);
    }

    let (ln, header) = next_line("EDGES")?;
    let n_edges = section(ln, &header, "EDGES")?;
    let mut edges = Vec::with_capacity(n_edges);
    for _ in 0..n_edges {
        let (ln, text) = next_line("edge row")?;
        let mut it = text.split_whitespace();
        let a: usize = it
            .next()
            .ok_or_else(|| parse_err(ln, "missing edge endpoint".into()))?
            .parse()
            .map_err(|e| parse_err(ln, format!("bad edge endpoint: {e}")))?;
        let b: usize = it
            .next()
            .ok_or_else(|| parse_err(ln, "missing edge endpoint".into()))?
            .parse()
            .map_err(|e| parse_err(ln, format!("bad edge endpoint: {e}")))?;
        if a >= n_nodes || b >= n_nodes {
            return Err(parse_err(ln, format!("edge ({a}, {b}) out of range")));
        }
        let tag_text = it
            .next()
            .ok_or_else(|| parse_err(ln, "missing edge tag".into()))?;
        let tag = parse_edge_tag(tag_text).ok_or_else(|| {
            parse_err(ln, format!("bad edge tag {tag_text:?} (want outer|iface<j>)"))
        })?;
        edges.push(TaggedEdge { a, b, tag });
    }

    let mut mesh = TriMesh {
        nodes,
        tris,
        tri_tags,
        edges,
        outer_nodes: vec![],
        interface_nodes: vec![],
    };
    mesh.rebuild_node_tag_lists();
    mesh.check_conforming()?;
    Ok(mesh)
}

fn parse_tri_tag(s: &str) -> Option<TriTag> {
    if s == "ext" {
        Some(TriTag::Exterior)
    } else {
        s.strip_prefix("obs")?.parse().ok().map(TriTag::Obstacle)
    }
}

fn parse_edge_tag(s: &str) -> Option<EdgeTag> {
    if s == "outer" {
        Some(EdgeTag::Outer)
    } else {
        s.strip_prefix("iface")?.parse().ok().map(EdgeTag::Interface)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{ObstacleComponent, ObstacleSpec, Shape};
    use crate::mesh::{generate_mesh, MeshParams};

    #[test]
    fn roundtrip_is_bit_exact() {
        let mesh = generate_mesh(
            &Shape::disk(0.0, 0.0, 1.0),
            &ObstacleSpec {
                components: vec![ObstacleComponent {
                    shape: Shape::disk(0.1, 0.0, 0.3),
                    lambda_re: 0.0,
                    lambda_im: 1.0,
                }],
            },
            &MeshParams {
                h: 0.15,
                ..MeshParams::default()
            },
        )
        .unwrap();
        let dir = std::env::temp_dir().join("trimesh-io-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("roundtrip.mesh");
        write_mesh(&mesh, &path).unwrap();
        let back = read_mesh(&path).unwrap();
        assert_eq!(mesh.tris, back.tris);
        assert_eq!(mesh.tri_tags, back.tri_tags);
        assert_eq!(mesh.edges, back.edges);
        for (a, b) in mesh.nodes.iter().zip(back.nodes.iter()) {
            assert_eq!(a.x, b.x, "x not bit-exact");
            assert_eq!(a.y, b.y, "y not bit-exact");
        }
        // Write the reread mesh again: byte-identical files.
        let path2 = dir.join("roundtrip2.mesh");
        write_mesh(&back, &path2).unwrap();
        assert_eq!(
            std::fs::read(&path).unwrap(),
            std::fs::read(&path2).unwrap()
        );
    }

    #[test]
    fn rejects_malformed_input() {
        let dir = std::env::temp_dir().join("trimesh-io-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad.mesh");
        std::fs::write(&path, "NODES 1\n0 0.0 0.0\nTRIANGLES 1\n0 0 0 0 ext\n").unwrap();
        match read_mesh(&path) {
            Err(Error::Parse { .. }) | Err(Error::Mesh(_)) => {}
            other => panic!("expected parse/mesh error, got {other:?}"),
        }
    }
}
