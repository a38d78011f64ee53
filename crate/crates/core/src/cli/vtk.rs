//! Legacy ASCII VTK polydata for nodal fields.

use std::fmt::Write as _;

use crate::fem::FeSpace;

/// Triangles of the mesh with `u` sampled at the vertices. The title line
/// carries `header`.
pub fn polydata(space: &FeSpace, u: &[f64], name: &str, header: &str) -> String {
    let mesh = space.mesh();
    let mut values = vec![0.0; mesh.n_vertices()];
    for k in 0..mesh.n_triangles() {
        let c = space.local_coeffs(k, u);
        for (i, &v) in mesh.triangle(k).iter().enumerate() {
            let mut l = [0.0; 3];
            l[i] = 1.0;
            values[v] = space.basis(k, l).value(&c);
        }
    }
    let mut s = String::new();
    s.push_str("# vtk DataFile Version 3.0\n");
    let _ = writeln!(s, "{header}");
    s.push_str("ASCII\nDATASET POLYDATA\n");
    let _ = writeln!(s, "POINTS {} double", mesh.n_vertices());
    for p in mesh.vertices() {
        let _ = writeln!(s, "{:e} {:e} 0", p[0], p[1]);
    }
    let nt = mesh.n_triangles();
    let _ = writeln!(s, "POLYGONS {nt} {}", 4 * nt);
    for t in mesh.triangles() {
        let _ = writeln!(s, "3 {} {} {}", t[0], t[1], t[2]);
    }
    let _ = writeln!(s, "POINT_DATA {}", mesh.n_vertices());
    let _ = writeln!(s, "SCALARS {name} double 1\nLOOKUP_TABLE default");
    for v in values {
        let _ = writeln!(s, "{v:e}");
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::TriMesh;

    #[test]
    fn vertex_values_of_a_p2_field() {
        let space = FeSpace::new(TriMesh::unit_square(2).unwrap(), 2).unwrap();
        let u = space.interpolate_all(|p| p[0] + 2.0 * p[1]);
        let s = polydata(&space, &u, "u", "hdr");
        let lines: Vec<&str> = s.lines().collect();
        assert_eq!(lines[1], "hdr");
        assert!(s.contains("POLYGONS 8 32"));
        let data: Vec<f64> = lines[lines.len() - 9..].iter().map(|l| l.parse().unwrap()).collect();
        for (v, p) in data.iter().zip(space.mesh().vertices()) {
            assert!((v - (p[0] + 2.0 * p[1])).abs() < 1e-14);
        }
    }
}
