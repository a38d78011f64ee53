//! Plain-text mesh files.
//!
//! ```text
//! trimesh 2
//! <nv>
//! x y            (nv lines)
//! <nt>
//! i j k refedge  (nt lines)
//! <nb>
//! v              (nb boundary vertex indices)
//! ```
//!
//! Floats are written in shortest round-trip form, so a write/read cycle is
//! bit-exact.

use std::fmt::Write as _;
use std::path::Path;

use super::TriMesh;
use crate::error::{Error, Result};

impl TriMesh {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        s.push_str("trimesh 2\n");
        let _ = writeln!(s, "{}", self.n_vertices());
        for p in self.vertices() {
            let _ = writeln!(s, "{:?} {:?}", p[0], p[1]);
        }
        let _ = writeln!(s, "{}", self.n_triangles());
        for (t, r) in self.triangles().iter().zip(self.refinement_edges()) {
            let _ = writeln!(s, "{} {} {} {}", t[0], t[1], t[2], r);
        }
        let bnd: Vec<usize> = (0..self.n_vertices()).filter(|&v| self.is_boundary_vertex(v)).collect();
        let _ = writeln!(s, "{}", bnd.len());
        for v in bnd {
            let _ = writeln!(s, "{v}");
        }
        s
    }

    /// Parse a mesh file. The result starts a new forest.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let mut next = |what: &str| {
            lines.next().ok_or_else(|| Error::MeshFormat {
                line: 0,
                msg: format!("unexpected end of file, expected {what}"),
            })
        };
        let (line, header) = next("header")?;
        if header.split_whitespace().collect::<Vec<_>>() != ["trimesh", "2"] {
            return Err(Error::MeshFormat {
                line,
                msg: format!("expected `trimesh 2`, found `{header}`"),
            });
        }
        let count = |(line, l): (usize, &str)| -> Result<usize> {
            l.parse().map_err(|_| Error::MeshFormat {
                line,
                msg: format!("expected a count, found `{l}`"),
            })
        };
        fn fields((line, l): (usize, &str), n: usize) -> Result<Vec<&str>> {
            let f: Vec<&str> = l.split_whitespace().collect();
            if f.len() != n {
                return Err(Error::MeshFormat {
                    line,
                    msg: format!("expected {n} fields, found {}", f.len()),
                });
            }
            Ok(f)
        }
        let bad = |line: usize, v: &str| Error::MeshFormat {
            line,
            msg: format!("invalid number `{v}`"),
        };

        let nv = count(next("vertex count")?)?;
        let mut vertices = Vec::with_capacity(nv);
        for _ in 0..nv {
            let l = next("vertex")?;
            let f = fields(l, 2)?;
            let x: f64 = f[0].parse().map_err(|_| bad(l.0, f[0]))?;
            let y: f64 = f[1].parse().map_err(|_| bad(l.0, f[1]))?;
            if !x.is_finite() || !y.is_finite() {
                return Err(bad(l.0, l.1));
            }
            vertices.push([x, y]);
        }
        let nt = count(next("triangle count")?)?;
        let mut triangles = Vec::with_capacity(nt);
        let mut refedge = Vec::with_capacity(nt);
        for _ in 0..nt {
            let l = next("triangle")?;
            let f = fields(l, 4)?;
            let mut t = [0usize; 3];
            for i in 0..3 {
                t[i] = f[i].parse().map_err(|_| bad(l.0, f[i]))?;
            }
            let r: u8 = f[3].parse().map_err(|_| bad(l.0, f[3]))?;
            if r > 2 {
                return Err(Error::MeshFormat {
                    line: l.0,
                    msg: format!("refinement edge must be 0, 1 or 2, found {r}"),
                });
            }
            triangles.push(t);
            refedge.push(r);
        }
        let nb = count(next("boundary count")?)?;
        let mut bnd = Vec::with_capacity(nb);
        for _ in 0..nb {
            let l = next("boundary vertex")?;
            bnd.push(count(l)?);
        }
        if let Some((line, l)) = lines.next() {
            return Err(Error::MeshFormat {
                line,
                msg: format!("trailing content `{l}`"),
            });
        }
        let mesh = TriMesh::from_raw(vertices, triangles, Some(refedge))?;
        let mut expected: Vec<usize> = (0..mesh.n_vertices()).filter(|&v| mesh.is_boundary_vertex(v)).collect();
        bnd.sort_unstable();
        bnd.dedup();
        expected.sort_unstable();
        if bnd != expected {
            return Err(Error::Mesh("boundary vertex list does not match the mesh boundary".into()));
        }
        if mesh.elements_without_interior_vertex() > 0 {
            log::warn!(
                "{} element(s) have no vertex inside the domain",
                mesh.elements_without_interior_vertex()
            );
        }
        Ok(mesh)
    }

    pub fn write_file(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn read_file(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::Rect;

    #[test]
    fn roundtrip_is_bit_exact() {
        let m = TriMesh::structured(Rect::new(0.0, 0.3, -0.7, 1.1), 5).unwrap().refine(&[1, 7, 22]);
        let text = m.to_text();
        let back = TriMesh::from_text(&text).unwrap();
        assert_eq!(back.n_triangles(), m.n_triangles());
        for (a, b) in back.vertices().iter().zip(m.vertices()) {
            assert_eq!(a[0].to_bits(), b[0].to_bits());
            assert_eq!(a[1].to_bits(), b[1].to_bits());
        }
        assert_eq!(back.triangles(), m.triangles());
        assert_eq!(back.refinement_edges(), m.refinement_edges());
        assert_eq!(back.to_text(), text);
    }

    #[test]
    fn format_errors_carry_lines() {
        let err = TriMesh::from_text("trimesh 3\n").unwrap_err();
        assert!(matches!(err, Error::MeshFormat { line: 1, .. }));
        let err = TriMesh::from_text("trimesh 2\n3\n0 0\n1 0\nx 1\n").unwrap_err();
        assert!(matches!(err, Error::MeshFormat { line: 5, .. }), "{err}");
        let bad_bnd = "trimesh 2\n3\n0 0\n1 0\n0 1\n1\n0 1 2 0\n2\n0\n1\n";
        assert!(TriMesh::from_text(bad_bnd).is_err());
        let ok = "trimesh 2\n3\n0 0\n1 0\n0 1\n1\n0 1 2 0\n3\n0\n1\n2\n";
        assert_eq!(TriMesh::from_text(ok).unwrap().n_triangles(), 1);
    }
}
