//! Fixed-topology triangle meshes, OBJ I/O and topology signatures.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{Error, Result, Vec3};

/// Triangle mesh with one UV per vertex.
///
/// `has_uvs` is false when the mesh was loaded from a file without texture
/// coordinates; `uvs` is then all zeros.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[u32; 3]>,
    pub uvs: Vec<[f64; 2]>,
    pub has_uvs: bool,
}

impl Mesh {
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[u32; 3]>, uvs: Vec<[f64; 2]>) -> Result<Self> {
        let mesh = Self {
            vertices,
            faces,
            uvs,
            has_uvs: true,
        };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.vertices.len();
        if self.uvs.len() != n {
            return Err(Error::Dimension {
                what: "uvs",
                expected: n,
                got: self.uvs.len(),
            });
        }
        for f in &self.faces {
            for &i in f {
                if i as usize >= n {
                    return Err(Error::IndexOutOfRange {
                        what: "vertices",
                        index: i as usize,
                        len: n,
                    });
                }
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(Error::Invalid(format!("face {f:?} repeats a vertex")));
            }
        }
        Ok(())
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    /// Same topology and UVs, new positions.
    pub fn with_vertices(&self, vertices: Vec<Vec3>) -> Result<Self> {
        if vertices.len() != self.vertices.len() {
            return Err(Error::Dimension {
                what: "vertices",
                expected: self.vertices.len(),
                got: vertices.len(),
            });
        }
        Ok(Self {
            vertices,
            faces: self.faces.clone(),
            uvs: self.uvs.clone(),
            has_uvs: self.has_uvs,
        })
    }

    /// Vertex positions flattened as `x0 y0 z0 x1 ...`.
    pub fn flat_positions(&self) -> Vec<f64> {
        self.vertices.iter().flat_map(|v| [v.x, v.y, v.z]).collect()
    }

    pub fn to_obj_string(&self) -> String {
        let mut out = String::with_capacity(self.vertices.len() * 64);
        for v in &self.vertices {
            let _ = writeln!(out, "v {} {} {}", v.x, v.y, v.z);
        }
        if self.has_uvs {
            for uv in &self.uvs {
                let _ = writeln!(out, "vt {} {}", uv[0], uv[1]);
            }
            for f in &self.faces {
                let (a, b, c) = (f[0] + 1, f[1] + 1, f[2] + 1);
                let _ = writeln!(out, "f {a}/{a} {b}/{b} {c}/{c}");
            }
        } else {
            for f in &self.faces {
                let _ = writeln!(out, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
            }
        }
        out
    }
}

/// Result of reading an OBJ file.
#[derive(Debug, Clone)]
pub struct LoadedMesh {
    pub mesh: Mesh,
    pub missing_uvs: bool,
}

pub fn load_mesh(path: impl AsRef<Path>) -> Result<LoadedMesh> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_obj(&text, &path.display().to_string())
}

pub fn save_mesh(mesh: &Mesh, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    mesh.validate()?;
    fs::write(path, mesh.to_obj_string()).map_err(|e| Error::io(path, e))
}

/// Parses the OBJ subset: `v`, `vt`, and triangular `f` records whose
/// position and texture indices agree. Other record types are ignored.
pub fn parse_obj(text: &str, source: &str) -> Result<LoadedMesh> {
    let perr = |line: usize, msg: String| Error::Parse {
        path: source.to_string(),
        line,
        msg,
    };
    let mut vertices = Vec::new();
    let mut uvs = Vec::new();
    let mut faces = Vec::new();
    let mut face_lines = Vec::new();

    for (lineno, raw) in text.lines().enumerate() {
        let lineno = lineno + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        let mut tok = line.split_whitespace();
        let Some(tag) = tok.next() else { continue };
        match tag {
            "v" => {
                let c: Vec<f64> = tok
                    .map(|t| t.parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| perr(lineno, format!("bad vertex coordinate: {e}")))?;
                if c.len() != 3 {
                    return Err(perr(lineno, format!("vertex needs 3 coordinates, got {}", c.len())));
                }
                vertices.push(Vec3::new(c[0], c[1], c[2]));
            }
            "vt" => {
                let c: Vec<f64> = tok
                    .map(|t| t.parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| perr(lineno, format!("bad texture coordinate: {e}")))?;
                if c.len() != 2 {
                    return Err(perr(lineno, format!("vt needs 2 coordinates, got {}", c.len())));
                }
                uvs.push([c[0], c[1]]);
            }
            "f" => {
                let refs: Vec<&str> = tok.collect();
                if refs.len() != 3 {
                    return Err(perr(
                        lineno,
                        format!("only triangles are supported, face has {} corners", refs.len()),
                    ));
                }
                let mut face = [0u32; 3];
                for (slot, r) in face.iter_mut().zip(&refs) {
                    let mut parts = r.split('/');
                    let vi = parse_index(parts.next(), lineno, &perr)?;
                    if let Some(t) = parts.next() {
                        if !t.is_empty() {
                            let ti = parse_index(Some(t), lineno, &perr)?;
                            if ti != vi {
                                return Err(perr(
                                    lineno,
                                    format!("texture index {ti} differs from vertex index {vi}"),
                                ));
                            }
                        }
                    }
                    *slot = (vi - 1) as u32;
                }
                faces.push(face);
                face_lines.push(lineno);
            }
            _ => {}
        }
    }

    let n = vertices.len();
    for (f, &lineno) in faces.iter().zip(&face_lines) {
        for &i in f {
            if i as usize >= n {
                return Err(perr(
                    lineno,
                    format!("vertex index {} out of range for {n} vertices", i + 1),
                ));
            }
        }
        if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
            return Err(perr(lineno, "face repeats a vertex".into()));
        }
    }

    let missing_uvs = uvs.is_empty() && n > 0;
    if missing_uvs {
        uvs = vec![[0.0, 0.0]; n];
    } else if uvs.len() != n {
        return Err(perr(
            text.lines().count(),
            format!("{} texture coordinates for {n} vertices", uvs.len()),
        ));
    }
    let mesh = Mesh {
        vertices,
        faces,
        uvs,
        has_uvs: !missing_uvs,
    };
    Ok(LoadedMesh { mesh, missing_uvs })
}

fn parse_index(tok: Option<&str>, lineno: usize, perr: &impl Fn(usize, String) -> Error) -> Result<usize> {
    let t = tok.ok_or_else(|| perr(lineno, "empty face reference".into()))?;
    let i: usize = t
        .parse()
        .map_err(|_| perr(lineno, format!("bad face index {t:?}")))?;
    if i == 0 {
        return Err(perr(lineno, "face indices are 1-based".into()));
    }
    Ok(i)
}

/// Connectivity fingerprint of a mesh; positions do not participate.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopologySignature {
    pub vertex_count: usize,
    pub face_count: usize,
    pub edge_count: usize,
    pub adjacency_hash: String,
}

pub fn topology_signature(mesh: &Mesh) -> TopologySignature {
    let mut canon: Vec<[u32; 3]> = mesh
        .faces
        .iter()
        .map(|f| {
            // rotate so the smallest index leads; winding is kept
            let m = (0..3).min_by_key(|&i| f[i]).unwrap_or(0);
            [f[m], f[(m + 1) % 3], f[(m + 2) % 3]]
        })
        .collect();
    canon.sort_unstable();

    let mut edges = HashSet::with_capacity(mesh.faces.len() * 2);
    for f in &mesh.faces {
        for (a, b) in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])] {
            edges.insert((a.min(b), a.max(b)));
        }
    }

    let mut h = Sha256::new();
    h.update((mesh.vertices.len() as u64).to_le_bytes());
    for f in &canon {
        for i in f {
            h.update(i.to_le_bytes());
        }
    }
    let digest = h.finalize();
    let adjacency_hash = digest.iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    });

    TopologySignature {
        vertex_count: mesh.vertices.len(),
        face_count: mesh.faces.len(),
        edge_count: edges.len(),
        adjacency_hash,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConsistencyReport {
    pub consistent: bool,
    /// `FIELD expected=X got=Y`, first differing quantity only.
    pub lines: Vec<String>,
}

pub fn check_consistency(a: &Mesh, b: &Mesh) -> ConsistencyReport {
    let (sa, sb) = (topology_signature(a), topology_signature(b));
    let fields: [(&str, String, String); 4] = [
        ("vertex_count", sa.vertex_count.to_string(), sb.vertex_count.to_string()),
        ("face_count", sa.face_count.to_string(), sb.face_count.to_string()),
        ("edge_count", sa.edge_count.to_string(), sb.edge_count.to_string()),
        ("adjacency_hash", sa.adjacency_hash.clone(), sb.adjacency_hash.clone()),
    ];
    let lines: Vec<String> = fields
        .iter()
        .find(|(_, x, y)| x != y)
        .map(|(name, x, y)| format!("{name} expected={x} got={y}"))
        .into_iter()
        .collect();
    ConsistencyReport {
        consistent: lines.is_empty(),
        lines,
    }
}

/// Check every mesh against the first; names the first offender.
pub fn check_family(meshes: &[&Mesh]) -> Result<()> {
    let Some(first) = meshes.first() else {
        return Ok(());
    };
    let reference = topology_signature(first);
    for (i, m) in meshes.iter().enumerate().skip(1) {
        if topology_signature(m) != reference {
            let report = check_consistency(first, m);
            return Err(Error::Topology(format!(
                "mesh {i} differs from mesh 0: {}",
                report.lines.join("; ")
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn tetrahedron() -> Mesh {
        Mesh::new(
            vec![
                Vec3::new(0.0, 0.0, 0.0),
                Vec3::new(1.0, 0.0, 0.0),
                Vec3::new(0.0, 1.0, 0.0),
                Vec3::new(0.0, 0.0, 1.0),
            ],
            vec![[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]],
            vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.5, 0.5]],
        )
        .unwrap()
    }

    #[test]
    fn tetrahedron_obj_lines() {
        let text = tetrahedron().to_obj_string();
        assert_eq!(text.lines().filter(|l| l.starts_with("v ")).count(), 4);
        assert_eq!(text.lines().filter(|l| l.starts_with("vt ")).count(), 4);
        assert_eq!(text.lines().filter(|l| l.starts_with("f ")).count(), 4);
        let back = parse_obj(&text, "mem").unwrap();
        assert_eq!(back.mesh, tetrahedron());
        assert!(!back.missing_uvs);
    }

    #[test]
    fn index_out_of_range_reports_line() {
        let text = "v 0 0 0\nv 1 0 0\nv 0 1 0\nv 0 0 1\nf 1 2 10\n";
        match parse_obj(text, "bad.obj") {
            Err(Error::Parse { line, msg, .. }) => {
                assert_eq!(line, 5);
                assert!(msg.contains("out of range"), "{msg}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn quads_rejected() {
        let text = "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n";
        assert!(matches!(parse_obj(text, "q"), Err(Error::Parse { line: 5, .. })));
    }

    #[test]
    fn bad_number_reports_line() {
        let text = "v 0 0 0\nv 1 x 0\n";
        assert!(matches!(parse_obj(text, "q"), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn missing_uvs_flagged() {
        let text = "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n";
        let loaded = parse_obj(text, "m").unwrap();
        assert!(loaded.missing_uvs);
        assert!(!loaded.mesh.has_uvs);
        assert!(loaded.mesh.uvs.iter().all(|uv| *uv == [0.0, 0.0]));
        // re-saving keeps the file free of vt records
        assert!(!loaded.mesh.to_obj_string().contains("vt"));
    }

    #[test]
    fn mismatched_vt_index_rejected() {
        let text = "v 0 0 0\nv 1 0 0\nv 0 1 0\nvt 0 0\nvt 1 0\nvt 0 1\nf 1/2 2/2 3/3\n";
        assert!(parse_obj(text, "m").is_err());
    }

    #[test]
    fn signature_ignores_positions() {
        let a = tetrahedron();
        let moved: Vec<Vec3> = a.vertices.iter().map(|v| v + Vec3::new(1.0, 2.0, 3.0)).collect();
        let b = a.with_vertices(moved).unwrap();
        assert_eq!(topology_signature(&a), topology_signature(&b));
    }

    #[test]
    fn signature_ignores_face_order_and_rotation() {
        let a = tetrahedron();
        let mut b = a.clone();
        b.faces.reverse();
        b.faces[0] = [b.faces[0][1], b.faces[0][2], b.faces[0][0]];
        assert_eq!(topology_signature(&a), topology_signature(&b));
    }

    #[test]
    fn signature_sees_winding() {
        let a = tetrahedron();
        let mut b = a.clone();
        let f = b.faces[0];
        b.faces[0] = [f[0], f[2], f[1]];
        let (sa, sb) = (topology_signature(&a), topology_signature(&b));
        assert_ne!(sa.adjacency_hash, sb.adjacency_hash);
        assert_eq!(sa.edge_count, 6);
    }

    #[test]
    fn consistency_report_names_face_count() {
        let a = tetrahedron();
        let mut b = a.clone();
        b.faces.pop();
        let r = check_consistency(&a, &b);
        assert!(!r.consistent);
        assert_eq!(r.lines, vec!["face_count expected=4 got=3".to_string()]);
        assert!(check_consistency(&a, &a).consistent);
    }

    #[test]
    fn new_rejects_repeated_index() {
        let v = vec![Vec3::zeros(); 3];
        assert!(Mesh::new(v, vec![[0, 0, 1]], vec![[0.0; 2]; 3]).is_err());
    }
}
