//! Minimal OBJ: `v x y z` and `f i j k` (1-based) lines only.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::TriangleMesh;
use crate::{Error, Result};

/// `%g`-style formatting with 6 significant digits.
pub fn format_g6(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    let sci = format!("{x:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    let trim = |s: String| -> String {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        }
    };
    if !(-4..6).contains(&exp) {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{}{:02}", trim(mantissa.to_string()), sign, exp.abs())
    } else {
        let decimals = (5 - exp).max(0) as usize;
        let s = trim(format!("{x:.decimals$}"));
        if s == "-0" { "0".to_string() } else { s }
    }
}

pub fn to_obj_string(m: &TriangleMesh) -> String {
    let mut s = String::with_capacity(m.vertices.len() * 32 + m.faces.len() * 20);
    for v in &m.vertices {
        let _ = writeln!(s, "v {} {} {}", format_g6(v[0]), format_g6(v[1]), format_g6(v[2]));
    }
    for f in &m.faces {
        let _ = writeln!(s, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
    }
    s
}

pub fn parse_obj(text: &str) -> Result<TriangleMesh> {
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let bad = |why: &str| Error::Format(format!("line {}: {why}: {line:?}", lineno + 1));
        let mut parts = line.split_ascii_whitespace();
        match parts.next() {
            Some("v") => {
                let xyz: Vec<f64> = parts
                    .map(|p| p.parse::<f64>().map_err(|_| bad("bad coordinate")))
                    .collect::<Result<_>>()?;
                if xyz.len() != 3 || xyz.iter().any(|c| !c.is_finite()) {
                    return Err(bad("vertex needs three finite coordinates"));
                }
                vertices.push([xyz[0], xyz[1], xyz[2]]);
            }
            Some("f") => {
                let idx: Vec<u32> = parts
                    .map(|p| p.parse::<u32>().map_err(|_| bad("face indices must be plain 1-based integers")))
                    .collect::<Result<_>>()?;
                if idx.len() != 3 || idx.contains(&0) {
                    return Err(bad("face needs three 1-based indices"));
                }
                faces.push([idx[0] - 1, idx[1] - 1, idx[2] - 1]);
            }
            _ => return Err(bad("unsupported directive")),
        }
    }
    TriangleMesh::new(vertices, faces)
}

pub fn write_obj(path: &Path, m: &TriangleMesh) -> Result<()> {
    fs::write(path, to_obj_string(m))?;
    Ok(())
}

pub fn read_obj(path: &Path) -> Result<TriangleMesh> {
    parse_obj(&fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::surface::shapes;

    #[test]
    fn g6_matches_printf() {
        let cases = [
            (0.0, "0"),
            (1.0, "1"),
            (-2.5, "-2.5"),
            (123456.0, "123456"),
            (1234567.0, "1.23457e+06"),
            (0.0001, "0.0001"),
            (0.00001234, "1.234e-05"),
            (3.14159265, "3.14159"),
            (99.99999, "100"),
            (-0.000000001, "-1e-09"),
        ];
        for (x, want) in cases {
            assert_eq!(format_g6(x), want, "{x}");
        }
    }

    #[test]
    fn round_trip_keeps_topology() {
        let m = shapes::icosphere(10.0, 1);
        let back = parse_obj(&to_obj_string(&m)).unwrap();
        assert_eq!(back.faces, m.faces);
        for (a, b) in back.vertices.iter().zip(&m.vertices) {
            for i in 0..3 {
                assert!((a[i] - b[i]).abs() <= 1e-5 * b[i].abs().max(1e-3));
            }
        }
        // Re-serialising the parsed mesh is byte-identical.
        assert_eq!(to_obj_string(&back), to_obj_string(&m));
    }

    #[test]
    fn rejects_other_directives() {
        assert!(parse_obj("v 0 0 0\nvn 0 0 1\n").is_err());
        assert!(parse_obj("# comment\n").is_err());
        assert!(parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1/1 2/2 3/3\n").is_err());
        assert!(parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 0 1 2\n").is_err());
        assert!(parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 4\n").is_err());
        assert!(parse_obj("v 0 0\n").is_err());
        assert!(parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n").is_ok());
    }
}
