//! Gmsh MSH 2.2 ASCII reader and writer.
//!
//! Only 2-node lines (type 1) and 3-node triangles (type 2) are accepted.
//! Line elements carry their boundary class in the first (physical) tag:
//! 1 = inflow, 2 = outflow, 3 = obstacle.

use std::collections::HashMap;
use std::fmt::Write as _;

use super::{signed_area, BoundaryEdge, BoundaryTag, Mesh};
use crate::error::{Error, Result};

const TRIANGLE_PHYSICAL_TAG: i64 = 10;

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    last: usize,
}

impl<'a> Lines<'a> {
    fn next_nonempty(&mut self) -> Option<(usize, &'a str)> {
        for (i, l) in self.inner.by_ref() {
            let l = l.trim();
            self.last = i + 1;
            if !l.is_empty() {
                return Some((i + 1, l));
            }
        }
        None
    }

    fn expect(&mut self, what: &str) -> Result<(usize, &'a str)> {
        self.next_nonempty().ok_or_else(|| Error::Parse {
            line: self.last + 1,
            message: format!("unexpected end of input, expected {what}"),
        })
    }
}

fn perr(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

fn parse_num<T: std::str::FromStr>(line: usize, tok: Option<&str>, what: &str) -> Result<T> {
    tok.ok_or_else(|| perr(line, format!("missing {what}")))?
        .parse()
        .map_err(|_| perr(line, format!("invalid {what}")))
}

/// Parses a Gmsh 2.2 ASCII mesh.
///
/// Nodes not referenced by any triangle are dropped; the remaining nodes
/// keep their file order. Clockwise triangles are reoriented.
pub fn parse_gmsh(text: &[u8]) -> Result<Mesh> {
    let text = std::str::from_utf8(text).map_err(|e| perr(0, format!("input is not UTF-8: {e}")))?;
    let mut lines = Lines {
        inner: text.lines().enumerate(),
        last: 0,
    };

    let mut nodes: Option<(Vec<i64>, Vec<[f64; 2]>)> = None;
    let mut elements: Option<(Vec<(usize, i64, Vec<i64>)>, Vec<(usize, Vec<i64>)>)> = None;
    let mut saw_format = false;

    while let Some((ln, header)) = lines.next_nonempty() {
        match header {
            "$MeshFormat" => {
                let (ln, l) = lines.expect("format line")?;
                let mut toks = l.split_whitespace();
                let version = toks.next().unwrap_or("");
                if !version.starts_with("2.") {
                    return Err(perr(ln, format!("unsupported MSH version {version}, expected 2.2")));
                }
                let file_type: i64 = parse_num(ln, toks.next(), "file type")?;
                if file_type != 0 {
                    return Err(perr(ln, "binary MSH files are not supported"));
                }
                expect_end(&mut lines, "$EndMeshFormat")?;
                saw_format = true;
            }
            "$Nodes" => {
                let (ln, l) = lines.expect("node count")?;
                let n: usize = parse_num(ln, Some(l), "node count")?;
                let mut ids = Vec::with_capacity(n);
                let mut coords = Vec::with_capacity(n);
                for _ in 0..n {
                    let (ln, l) = lines.expect("node")?;
                    let mut toks = l.split_whitespace();
                    ids.push(parse_num(ln, toks.next(), "node id")?);
                    let x: f64 = parse_num(ln, toks.next(), "x coordinate")?;
                    let y: f64 = parse_num(ln, toks.next(), "y coordinate")?;
                    coords.push([x, y]);
                }
                expect_end(&mut lines, "$EndNodes")?;
                nodes = Some((ids, coords));
            }
            "$Elements" => {
                let (ln, l) = lines.expect("element count")?;
                let n: usize = parse_num(ln, Some(l), "element count")?;
                let mut segs = Vec::new();
                let mut tris = Vec::new();
                for _ in 0..n {
                    let (ln, l) = lines.expect("element")?;
                    let toks: Vec<&str> = l.split_whitespace().collect();
                    let _id: i64 = parse_num(ln, toks.first().copied(), "element id")?;
                    let ty: i64 = parse_num(ln, toks.get(1).copied(), "element type")?;
                    let ntags: usize = parse_num(ln, toks.get(2).copied(), "tag count")?;
                    let tags = toks.get(3..3 + ntags).ok_or_else(|| perr(ln, "missing element tags"))?;
                    let physical: i64 = if ntags > 0 { parse_num(ln, Some(tags[0]), "physical tag")? } else { 0 };
                    let rest: Result<Vec<i64>> = toks[3 + ntags..]
                        .iter()
                        .map(|t| parse_num(ln, Some(t), "node reference"))
                        .collect();
                    let rest = rest?;
                    let expected = match ty {
                        1 => 2,
                        2 => 3,
                        other => {
                            return Err(perr(
                                ln,
                                format!("unsupported element type {other} ({})", element_name(other)),
                            ))
                        }
                    };
                    if rest.len() != expected {
                        return Err(perr(ln, format!("element type {ty} needs {expected} nodes, got {}", rest.len())));
                    }
                    if ty == 1 {
                        segs.push((ln, physical, rest));
                    } else {
                        tris.push((ln, rest));
                    }
                }
                expect_end(&mut lines, "$EndElements")?;
                elements = Some((segs, tris));
            }
            h if h.starts_with("$End") => return Err(perr(ln, format!("unexpected {h}"))),
            h if h.starts_with('$') => {
                // Skip unknown sections such as $PhysicalNames.
                let end = format!("$End{}", &h[1..]);
                loop {
                    let (_, l) = lines.expect(&end)?;
                    if l == end {
                        break;
                    }
                }
            }
            other => return Err(perr(ln, format!("expected a section header, found {other:?}"))),
        }
    }

    if !saw_format {
        return Err(perr(1, "missing $MeshFormat section"));
    }
    let (ids, coords) = nodes.ok_or_else(|| perr(lines.last, "missing $Nodes section"))?;
    let (segs, tris) = elements.ok_or_else(|| perr(lines.last, "missing $Elements section"))?;

    let index_of: HashMap<i64, usize> = ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
    let lookup = |ln: usize, id: i64| -> Result<usize> {
        index_of
            .get(&id)
            .copied()
            .ok_or_else(|| perr(ln, format!("reference to unknown node {id}")))
    };

    let mut referenced = vec![false; ids.len()];
    let mut raw_tris = Vec::with_capacity(tris.len());
    for (ln, t) in &tris {
        let mut v = [lookup(*ln, t[0])?, lookup(*ln, t[1])?, lookup(*ln, t[2])?];
        let area = signed_area(coords[v[0]], coords[v[1]], coords[v[2]]);
        if area == 0.0 {
            return Err(perr(*ln, "degenerate triangle"));
        }
        if area < 0.0 {
            v.swap(1, 2);
        }
        for &x in &v {
            referenced[x] = true;
        }
        raw_tris.push(v);
    }

    let mut renumber = vec![usize::MAX; ids.len()];
    let mut vertices = Vec::new();
    for (i, &r) in referenced.iter().enumerate() {
        if r {
            renumber[i] = vertices.len();
            vertices.push(coords[i]);
        }
    }
    let triangles = raw_tris
        .iter()
        .map(|t| [renumber[t[0]], renumber[t[1]], renumber[t[2]]])
        .collect();

    let mut boundary_edges = Vec::with_capacity(segs.len());
    for (ln, physical, s) in &segs {
        let tag = BoundaryTag::from_physical_id(*physical)
            .ok_or_else(|| perr(*ln, format!("unknown physical tag {physical} on line element")))?;
        let (a, b) = (lookup(*ln, s[0])?, lookup(*ln, s[1])?);
        if !referenced[a] || !referenced[b] {
            return Err(perr(*ln, "line element references a node outside every triangle"));
        }
        boundary_edges.push(BoundaryEdge {
            vertices: [renumber[a], renumber[b]],
            tag,
        });
    }

    let mesh = Mesh {
        vertices,
        triangles,
        boundary_edges,
    };
    mesh.validate()?;
    Ok(mesh)
}

fn expect_end(lines: &mut Lines<'_>, end: &str) -> Result<()> {
    let (ln, l) = lines.expect(end)?;
    if l != end {
        return Err(perr(ln, format!("expected {end}, found {l:?}")));
    }
    Ok(())
}

fn element_name(ty: i64) -> &'static str {
    match ty {
        3 => "4-node quadrangle",
        4 => "4-node tetrahedron",
        8 => "3-node line",
        9 => "6-node triangle",
        15 => "1-node point",
        _ => "unsupported",
    }
}

/// Serializes a mesh as Gmsh 2.2 ASCII. Coordinates are written with the
/// shortest representation that round-trips exactly.
pub fn write_gmsh(mesh: &Mesh) -> String {
    let mut s = String::new();
    s.push_str("$MeshFormat\n2.2 0 8\n$EndMeshFormat\n");
    s.push_str("$PhysicalNames\n4\n1 1 \"inflow\"\n1 2 \"outflow\"\n1 3 \"obstacle\"\n2 10 \"fluid\"\n$EndPhysicalNames\n");
    let _ = writeln!(s, "$Nodes\n{}", mesh.vertices.len());
    for (i, v) in mesh.vertices.iter().enumerate() {
        let _ = writeln!(s, "{} {:?} {:?} 0", i + 1, v[0], v[1]);
    }
    s.push_str("$EndNodes\n");
    let _ = writeln!(s, "$Elements\n{}", mesh.boundary_edges.len() + mesh.triangles.len());
    let mut id = 1;
    for e in &mesh.boundary_edges {
        let p = e.tag.physical_id();
        let _ = writeln!(s, "{id} 1 2 {p} {p} {} {}", e.vertices[0] + 1, e.vertices[1] + 1);
        id += 1;
    }
    for t in &mesh.triangles {
        let p = TRIANGLE_PHYSICAL_TAG;
        let _ = writeln!(s, "{id} 2 2 {p} {p} {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1);
        id += 1;
    }
    s.push_str("$EndElements\n");
    s
}
