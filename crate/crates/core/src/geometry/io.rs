//! Mesh file formats: Wavefront OBJ surfaces, Gmsh MSH v2 ASCII and VTK
//! legacy ASCII tetrahedral meshes.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::mesh::{TetMesh, TriSurface};
use super::GeometryError;
use crate::math::Vec3;

fn bad(msg: impl Into<String>) -> GeometryError {
    GeometryError::Format(msg.into())
}

fn parse_f64(tok: Option<&str>, line: usize) -> Result<f64, GeometryError> {
    tok.ok_or_else(|| bad(format!("line {line}: missing number")))?
        .parse()
        .map_err(|_| bad(format!("line {line}: bad number")))
}

fn parse_usize(tok: Option<&str>, line: usize) -> Result<usize, GeometryError> {
    tok.ok_or_else(|| bad(format!("line {line}: missing index")))?
        .parse()
        .map_err(|_| bad(format!("line {line}: bad index")))
}

/// Parses OBJ text. Polygons are fan-triangulated; texture and normal
/// indices (`v/vt/vn`) are ignored.
pub fn parse_obj(text: &str) -> Result<TriSurface, GeometryError> {
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let ln = ln + 1;
        let mut tok = line.split_whitespace();
        match tok.next() {
            Some("v") => {
                let x = parse_f64(tok.next(), ln)?;
                let y = parse_f64(tok.next(), ln)?;
                let z = parse_f64(tok.next(), ln)?;
                vertices.push(Vec3::new(x, y, z));
            }
            Some("f") => {
                let mut ids = Vec::new();
                for t in tok {
                    let first = t.split('/').next().unwrap_or("");
                    let i: i64 = first.parse().map_err(|_| bad(format!("line {ln}: bad face index")))?;
                    let idx = if i < 0 { vertices.len() as i64 + i } else { i - 1 };
                    if idx < 0 {
                        return Err(bad(format!("line {ln}: face index out of range")));
                    }
                    ids.push(idx as usize);
                }
                if ids.len() < 3 {
                    return Err(bad(format!("line {ln}: face with fewer than 3 vertices")));
                }
                for k in 1..ids.len() - 1 {
                    triangles.push([ids[0], ids[k], ids[k + 1]]);
                }
            }
            _ => {}
        }
    }
    TriSurface::new(vertices, triangles)
}

pub fn read_obj(path: impl AsRef<Path>) -> Result<TriSurface, GeometryError> {
    parse_obj(&fs::read_to_string(path)?)
}

pub fn write_obj(surface: &TriSurface, mut w: impl Write) -> Result<(), GeometryError> {
    for v in &surface.vertices {
        writeln!(w, "v {:?} {:?} {:?}", v.x, v.y, v.z)?;
    }
    for t in &surface.triangles {
        writeln!(w, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1)?;
    }
    Ok(())
}

/// Parses a Gmsh MSH 2.x ASCII file, keeping the 4-node tetrahedra
/// (element type 4). Node tags may be sparse.
pub fn parse_msh(text: &str) -> Result<TetMesh, GeometryError> {
    let lines: Vec<&str> = text.lines().collect();
    let mut i = 0;
    let mut tag_to_index = std::collections::HashMap::new();
    let mut vertices = Vec::new();
    let mut tets = Vec::new();
    let mut saw_format = false;
    while i < lines.len() {
        match lines[i].trim() {
            "$MeshFormat" => {
                let version = lines.get(i + 1).and_then(|l| l.split_whitespace().next()).unwrap_or("");
                if !version.starts_with('2') {
                    return Err(bad(format!("unsupported MSH version {version}")));
                }
                let ftype = lines.get(i + 1).and_then(|l| l.split_whitespace().nth(1)).unwrap_or("");
                if ftype != "0" {
                    return Err(bad("binary MSH files are not supported"));
                }
                saw_format = true;
                i += 2;
            }
            "$Nodes" => {
                let n = parse_usize(lines.get(i + 1).map(|l| l.trim()), i + 2)?;
                for k in 0..n {
                    let ln = i + 2 + k;
                    let mut tok = lines.get(ln).ok_or_else(|| bad("truncated $Nodes"))?.split_whitespace();
                    let tag = parse_usize(tok.next(), ln + 1)?;
                    let x = parse_f64(tok.next(), ln + 1)?;
                    let y = parse_f64(tok.next(), ln + 1)?;
                    let z = parse_f64(tok.next(), ln + 1)?;
                    tag_to_index.insert(tag, vertices.len());
                    vertices.push(Vec3::new(x, y, z));
                }
                i += 2 + n;
            }
            "$Elements" => {
                let n = parse_usize(lines.get(i + 1).map(|l| l.trim()), i + 2)?;
                for k in 0..n {
                    let ln = i + 2 + k;
                    let toks: Vec<&str> =
                        lines.get(ln).ok_or_else(|| bad("truncated $Elements"))?.split_whitespace().collect();
                    let etype = parse_usize(toks.get(1).copied(), ln + 1)?;
                    if etype != 4 {
                        continue;
                    }
                    let ntags = parse_usize(toks.get(2).copied(), ln + 1)?;
                    let mut t = [0usize; 4];
                    for (j, slot) in t.iter_mut().enumerate() {
                        let tag = parse_usize(toks.get(3 + ntags + j).copied(), ln + 1)?;
                        *slot = *tag_to_index
                            .get(&tag)
                            .ok_or_else(|| bad(format!("line {}: unknown node {tag}", ln + 1)))?;
                    }
                    tets.push(t);
                }
                i += 2 + n;
            }
            _ => i += 1,
        }
    }
    if !saw_format {
        return Err(bad("missing $MeshFormat"));
    }
    TetMesh::new_reoriented(vertices, tets)
}

pub fn read_msh(path: impl AsRef<Path>) -> Result<TetMesh, GeometryError> {
    parse_msh(&fs::read_to_string(path)?)
}

pub fn write_msh(mesh: &TetMesh, mut w: impl Write) -> Result<(), GeometryError> {
    writeln!(w, "$MeshFormat\n2.2 0 8\n$EndMeshFormat")?;
    writeln!(w, "$Nodes\n{}", mesh.vertices.len())?;
    for (i, v) in mesh.vertices.iter().enumerate() {
        writeln!(w, "{} {:?} {:?} {:?}", i + 1, v.x, v.y, v.z)?;
    }
    writeln!(w, "$EndNodes\n$Elements\n{}", mesh.tets.len())?;
    for (i, t) in mesh.tets.iter().enumerate() {
        writeln!(w, "{} 4 2 0 1 {} {} {} {}", i + 1, t[0] + 1, t[1] + 1, t[2] + 1, t[3] + 1)?;
    }
    writeln!(w, "$EndElements")?;
    Ok(())
}

/// Parses a VTK legacy ASCII unstructured grid, keeping cells of type 10
/// (tetrahedra).
pub fn parse_vtk(text: &str) -> Result<TetMesh, GeometryError> {
    if !text.starts_with("# vtk DataFile") {
        return Err(bad("missing VTK header"));
    }
    let mut tok = text.lines().skip(2).flat_map(|l| l.split_whitespace());
    match tok.next() {
        Some("ASCII") => {}
        _ => return Err(bad("only ASCII VTK files are supported")),
    }
    let mut vertices = Vec::new();
    let mut cells: Vec<Vec<usize>> = Vec::new();
    let mut types = Vec::new();
    while let Some(t) = tok.next() {
        match t {
            "DATASET" => {
                if tok.next() != Some("UNSTRUCTURED_GRID") {
                    return Err(bad("expected UNSTRUCTURED_GRID"));
                }
            }
            "POINTS" => {
                let n = parse_usize(tok.next(), 0)?;
                tok.next();
                for _ in 0..n {
                    let x = parse_f64(tok.next(), 0)?;
                    let y = parse_f64(tok.next(), 0)?;
                    let z = parse_f64(tok.next(), 0)?;
                    vertices.push(Vec3::new(x, y, z));
                }
            }
            "CELLS" => {
                let n = parse_usize(tok.next(), 0)?;
                tok.next();
                for _ in 0..n {
                    let k = parse_usize(tok.next(), 0)?;
                    let mut c = Vec::with_capacity(k);
                    for _ in 0..k {
                        c.push(parse_usize(tok.next(), 0)?);
                    }
                    cells.push(c);
                }
            }
            "CELL_TYPES" => {
                let n = parse_usize(tok.next(), 0)?;
                for _ in 0..n {
                    types.push(parse_usize(tok.next(), 0)?);
                }
            }
            // Attribute sections follow the geometry; nothing after them is needed.
            "POINT_DATA" | "CELL_DATA" => break,
            _ => {}
        }
    }
    if types.len() != cells.len() {
        return Err(bad("CELL_TYPES count does not match CELLS"));
    }
    let mut tets = Vec::new();
    for (c, ty) in cells.iter().zip(&types) {
        if *ty == 10 {
            if c.len() != 4 {
                return Err(bad("tetra cell without 4 points"));
            }
            if c.iter().any(|&v| v >= vertices.len()) {
                return Err(bad("cell index out of range"));
            }
            tets.push([c[0], c[1], c[2], c[3]]);
        }
    }
    TetMesh::new_reoriented(vertices, tets)
}

pub fn read_vtk(path: impl AsRef<Path>) -> Result<TetMesh, GeometryError> {
    parse_vtk(&fs::read_to_string(path)?)
}

pub fn write_vtk(mesh: &TetMesh, mut w: impl Write) -> Result<(), GeometryError> {
    writeln!(w, "# vtk DataFile Version 3.0\ntet mesh\nASCII\nDATASET UNSTRUCTURED_GRID")?;
    writeln!(w, "POINTS {} double", mesh.vertices.len())?;
    for v in &mesh.vertices {
        writeln!(w, "{:?} {:?} {:?}", v.x, v.y, v.z)?;
    }
    writeln!(w, "CELLS {} {}", mesh.tets.len(), mesh.tets.len() * 5)?;
    for t in &mesh.tets {
        writeln!(w, "4 {} {} {} {}", t[0], t[1], t[2], t[3])?;
    }
    writeln!(w, "CELL_TYPES {}", mesh.tets.len())?;
    for _ in &mesh.tets {
        writeln!(w, "10")?;
    }
    Ok(())
}
