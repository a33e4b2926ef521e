//! OFF mesh ingestion. Only vertices and (for surface sampling) polygon
//! faces are read; colors and normals on the same lines are ignored.

use rand::Rng;

use super::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::rng::rng_for;

/// Vertices plus triangulated faces.
#[derive(Debug, Clone, PartialEq)]
pub struct OffMesh {
    pub vertices: Vec<[f64; 3]>,
    pub triangles: Vec<[usize; 3]>,
}

fn perr<T>(line: usize, msg: impl Into<String>) -> Result<T> {
    Err(Error::Parse {
        line,
        msg: msg.into(),
    })
}

/// Meaningful lines with their 1-based numbers: comments stripped, blanks
/// skipped.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    text.lines().enumerate().filter_map(|(i, raw)| {
        let body = raw.split('#').next().unwrap_or("");
        let toks: Vec<&str> = body.split_whitespace().collect();
        (!toks.is_empty()).then_some((i + 1, toks))
    })
}

fn parse_count(line: usize, tok: &str, what: &str) -> Result<usize> {
    tok.parse()
        .or_else(|_| perr(line, format!("{what} count {tok:?} is not a non-negative integer")))
}

fn parse_impl(bytes: &[u8], want_faces: bool) -> Result<OffMesh> {
    let text = match std::str::from_utf8(bytes) {
        Ok(t) => t,
        Err(e) => {
            let line = 1 + bytes[..e.valid_up_to()].iter().filter(|&&b| b == b'\n').count();
            return perr(line, "input is not valid UTF-8 text");
        }
    };
    let mut lines = content_lines(text);
    let Some((hline, htoks)) = lines.next() else {
        return perr(1, "empty input, expected an \"OFF\" header");
    };
    let Some(rest) = htoks[0].strip_prefix("OFF") else {
        return perr(hline, format!("expected \"OFF\" header, found {:?}", htoks[0]));
    };
    // Some exporters glue the counts onto the header ("OFF490 518 0").
    let mut count_toks: Vec<&str> = Vec::new();
    if !rest.is_empty() {
        count_toks.push(rest);
    }
    count_toks.extend(&htoks[1..]);
    let cline = if count_toks.is_empty() {
        let Some((l, t)) = lines.next() else {
            return perr(hline + 1, "missing vertex/face count line");
        };
        count_toks = t;
        l
    } else {
        hline
    };
    if count_toks.len() < 2 {
        return perr(cline, "count line needs vertex and face counts");
    }
    let nv = parse_count(cline, count_toks[0], "vertex")?;
    let nf = parse_count(cline, count_toks[1], "face")?;
    if nv == 0 {
        return perr(cline, "mesh declares zero vertices");
    }

    let mut vertices = Vec::with_capacity(nv.min(1 << 20));
    let mut last = cline;
    while vertices.len() < nv {
        let Some((l, toks)) = lines.next() else {
            return perr(
                last + 1,
                format!("expected {nv} vertices, found {} before end of input", vertices.len()),
            );
        };
        last = l;
        if toks.len() < 3 {
            return perr(l, format!("vertex line has {} coordinates, expected 3", toks.len()));
        }
        let mut v = [0.0; 3];
        for (slot, tok) in v.iter_mut().zip(&toks) {
            *slot = match tok.parse::<f64>() {
                Ok(x) if x.is_finite() => x,
                _ => return perr(l, format!("coordinate {tok:?} is not a finite number")),
            };
        }
        vertices.push(v);
    }

    let mut triangles = Vec::new();
    if want_faces {
        for _ in 0..nf {
            let Some((l, toks)) = lines.next() else {
                return perr(last + 1, format!("expected {nf} faces before end of input"));
            };
            last = l;
            let k = parse_count(l, toks[0], "face vertex")?;
            if k < 3 || toks.len() < k + 1 {
                return perr(l, format!("face needs at least 3 indices, line has {}", toks.len() - 1));
            }
            let idx = toks[1..=k]
                .iter()
                .map(|t| match t.parse::<usize>() {
                    Ok(i) if i < nv => Ok(i),
                    _ => perr(l, format!("face index {t:?} is not a vertex index below {nv}")),
                })
                .collect::<Result<Vec<_>>>()?;
            for j in 1..k - 1 {
                triangles.push([idx[0], idx[j], idx[j + 1]]);
            }
        }
    }
    Ok(OffMesh {
        vertices,
        triangles,
    })
}

/// Vertex set of an OFF file as an unlabeled cloud.
pub fn parse_off(bytes: &[u8]) -> Result<PointCloud> {
    let mesh = parse_impl(bytes, false)?;
    PointCloud::new(mesh.vertices, None)
}

pub fn parse_off_mesh(bytes: &[u8]) -> Result<OffMesh> {
    parse_impl(bytes, true)
}

/// Writes the cloud as a face-less OFF file. Coordinates use the shortest
/// representation that parses back to the same `f64`.
pub fn serialize_off(cloud: &PointCloud) -> String {
    let mut out = format!("OFF\n{} 0 0\n", cloud.len());
    for p in cloud.points() {
        out.push_str(&format!("{} {} {}\n", p[0], p[1], p[2]));
    }
    out
}

fn triangle_area(a: [f64; 3], b: [f64; 3], c: [f64; 3]) -> f64 {
    let u = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
    let v = [c[0] - a[0], c[1] - a[1], c[2] - a[2]];
    let x = [
        u[1] * v[2] - u[2] * v[1],
        u[2] * v[0] - u[0] * v[2],
        u[0] * v[1] - u[1] * v[0],
    ];
    0.5 * (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt()
}

impl OffMesh {
    /// Uniform area-weighted surface sample of `n` points, then unit-sphere
    /// normalized.
    pub fn sample_surface(&self, n: usize, seed: u64, label: Option<usize>) -> Result<PointCloud> {
        if n == 0 {
            return Err(Error::Argument("cannot sample zero points".into()));
        }
        let mut cumulative = Vec::with_capacity(self.triangles.len());
        let mut total = 0.0;
        for t in &self.triangles {
            total += triangle_area(self.vertices[t[0]], self.vertices[t[1]], self.vertices[t[2]]);
            cumulative.push(total);
        }
        if !(total > 0.0) {
            return Err(Error::Degenerate("mesh has no surface area".into()));
        }
        let mut rng = rng_for(seed, &[0x0ff]);
        let mut points = Vec::with_capacity(n);
        for _ in 0..n {
            let r = rng.random::<f64>() * total;
            let ti = cumulative.partition_point(|&c| c <= r).min(cumulative.len() - 1);
            let [a, b, c] = self.triangles[ti].map(|i| self.vertices[i]);
            let (mut u, mut v) = (rng.random::<f64>(), rng.random::<f64>());
            if u + v > 1.0 {
                u = 1.0 - u;
                v = 1.0 - v;
            }
            points.push(std::array::from_fn(|k| a[k] + u * (b[k] - a[k]) + v * (c[k] - a[k])));
        }
        PointCloud::new(points, label)?.normalize_unit_sphere()
    }
}
