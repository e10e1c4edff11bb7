//! Conforming triangulations of convex polygons with newest-vertex bisection.
//!
//! Every element stores its vertices counterclockwise together with the local
//! index of its newest vertex; the refinement edge is the edge opposite that
//! vertex. Local edge `e` of an element is the edge opposite local vertex `e`.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Point2 { x, y }
    }

    pub fn sub(self, other: Point2) -> [f64; 2] {
        [self.x - other.x, self.y - other.y]
    }

    pub fn midpoint(self, other: Point2) -> Point2 {
        Point2::new(0.5 * (self.x + other.x), 0.5 * (self.y + other.y))
    }

    pub fn dist(self, other: Point2) -> f64 {
        let [dx, dy] = self.sub(other);
        dx.hypot(dy)
    }

    /// Lexicographic comparison on (x, y).
    fn lex_less(self, other: Point2) -> bool {
        self.x < other.x || (self.x == other.x && self.y < other.y)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Element {
    /// Counterclockwise vertex indices.
    pub vertices: [usize; 3],
    /// Local index of the refinement edge (equal to the local index of the newest vertex).
    pub refinement_edge: usize,
    /// Index of the element of the previous mesh level this element descends from.
    pub parent: Option<usize>,
    /// Number of bisections separating this element from the initial mesh.
    pub level: u32,
}

impl Element {
    /// Endpoints of local edge `e`, ordered counterclockwise.
    pub fn edge(&self, e: usize) -> (usize, usize) {
        (self.vertices[(e + 1) % 3], self.vertices[(e + 2) % 3])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FaceKind {
    Interior,
    Boundary,
}

/// One side of a face: element index and the local edge it occupies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FaceSide {
    pub element: usize,
    pub local_edge: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Face {
    pub vertices: [usize; 2],
    pub kind: FaceKind,
    /// Element for which the face normal points outward.
    pub minus: FaceSide,
    /// Element for which the face normal points inward; `None` on the boundary.
    pub plus: Option<FaceSide>,
    pub normal: [f64; 2],
}

impl Face {
    pub fn sides(&self) -> impl Iterator<Item = FaceSide> + '_ {
        std::iter::once(self.minus).chain(self.plus)
    }

    pub fn is_boundary(&self) -> bool {
        self.kind == FaceKind::Boundary
    }

    /// Unit tangent obtained by rotating the normal counterclockwise.
    pub fn tangent(&self) -> [f64; 2] {
        [-self.normal[1], self.normal[0]]
    }
}

/// Canonical face normal.
///
/// Interior faces use the tangent running from the lexicographically smaller
/// endpoint to the larger one, rotated clockwise. Boundary faces use the
/// outward normal `outward`, which only needs to point to the exterior side.
pub fn face_normal(a: Point2, b: Point2, kind: FaceKind, outward: [f64; 2]) -> Result<[f64; 2]> {
    let len = a.dist(b);
    if !(len > 0.0) {
        return Err(Error::DegenerateFace(0, 0));
    }
    let (lo, hi) = if a.lex_less(b) { (a, b) } else { (b, a) };
    let [tx, ty] = hi.sub(lo);
    let n = [ty / len, -tx / len];
    Ok(match kind {
        FaceKind::Interior => n,
        FaceKind::Boundary => {
            if n[0] * outward[0] + n[1] * outward[1] >= 0.0 {
                n
            } else {
                [-n[0], -n[1]]
            }
        }
    })
}

#[derive(Debug, Clone)]
pub struct MeshLevel {
    pub vertices: Vec<Point2>,
    pub elements: Vec<Element>,
    pub faces: Vec<Face>,
    /// Face index of each local edge of each element.
    pub element_faces: Vec<[usize; 3]>,
    pub index: usize,
}

#[derive(Debug, Clone)]
pub struct SizeData {
    pub h_element: Vec<f64>,
    pub h_face: Vec<f64>,
    /// Largest ratio h_K / h_F (or its inverse) over adjacent element/face pairs.
    pub max_adjacent_ratio: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShapeStats {
    pub min_angle: f64,
    /// Max over elements of longest edge divided by shortest altitude.
    pub max_aspect: f64,
}

fn signed_area(a: Point2, b: Point2, c: Point2) -> f64 {
    0.5 * ((b.x - a.x) * (c.y - a.y) - (c.x - a.x) * (b.y - a.y))
}

fn edge_key(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

/// Structured mesh of the unit square with `2n^2` right triangles. Every square
/// cell is cut along its (0,0)-(1,1) diagonal, which becomes the refinement edge.
pub fn unit_square_mesh(n: usize) -> Result<MeshLevel> {
    if n == 0 {
        return Err(Error::Mesh("unit_square_mesh needs n >= 1".into()));
    }
    let idx = |i: usize, j: usize| j * (n + 1) + i;
    let mut vertices = Vec::with_capacity((n + 1) * (n + 1));
    for j in 0..=n {
        for i in 0..=n {
            vertices.push(Point2::new(i as f64 / n as f64, j as f64 / n as f64));
        }
    }
    let mut elements = Vec::with_capacity(2 * n * n);
    for j in 0..n {
        for i in 0..n {
            let (v00, v10, v01, v11) = (idx(i, j), idx(i + 1, j), idx(i, j + 1), idx(i + 1, j + 1));
            elements.push(Element {
                vertices: [v00, v10, v11],
                refinement_edge: 1,
                parent: None,
                level: 0,
            });
            elements.push(Element {
                vertices: [v00, v11, v01],
                refinement_edge: 2,
                parent: None,
                level: 0,
            });
        }
    }
    MeshLevel::from_parts(vertices, elements, 0)
}

/// Fan triangulation of a convex polygon. The polygon may be given in either
/// orientation; nonconvex or degenerate input is rejected. Each triangle uses
/// its longest edge as refinement edge.
pub fn convex_polygon_mesh(polygon: &[Point2]) -> Result<MeshLevel> {
    let n = polygon.len();
    if n < 3 {
        return Err(Error::NonConvexDomain(format!("{n} vertices")));
    }
    let mut pts = polygon.to_vec();
    let area: f64 = (0..n)
        .map(|i| {
            let (a, b) = (pts[i], pts[(i + 1) % n]);
            0.5 * (a.x * b.y - b.x * a.y)
        })
        .sum();
    if area < 0.0 {
        pts.reverse();
    }
    for i in 0..n {
        let (a, b, c) = (pts[i], pts[(i + 1) % n], pts[(i + 2) % n]);
        if !(signed_area(a, b, c) > 0.0) {
            return Err(Error::NonConvexDomain(format!(
                "turn at vertex ({}, {}) is not strictly convex",
                b.x, b.y
            )));
        }
    }
    let mut elements = Vec::with_capacity(n - 2);
    for i in 1..n - 1 {
        let vs = [0, i, i + 1];
        let lens: Vec<f64> = (0..3)
            .map(|e| pts[vs[(e + 1) % 3]].dist(pts[vs[(e + 2) % 3]]))
            .collect();
        let longest = (0..3)
            .max_by(|&a, &b| lens[a].total_cmp(&lens[b]).then(b.cmp(&a)))
            .unwrap();
        elements.push(Element {
            vertices: vs,
            refinement_edge: longest,
            parent: None,
            level: 0,
        });
    }
    MeshLevel::from_parts(pts, elements, 0)
}

impl MeshLevel {
    /// Builds the face list and checks orientation and conformity.
    pub fn from_parts(vertices: Vec<Point2>, elements: Vec<Element>, index: usize) -> Result<Self> {
        for v in &vertices {
            if !v.x.is_finite() || !v.y.is_finite() {
                return Err(Error::Mesh("non-finite vertex coordinate".into()));
            }
        }
        for (k, el) in elements.iter().enumerate() {
            let [a, b, c] = el.vertices;
            if a == b || b == c || a == c {
                return Err(Error::Mesh(format!("element {k} has repeated vertices")));
            }
            if !(signed_area(vertices[a], vertices[b], vertices[c]) > 0.0) {
                return Err(Error::Mesh(format!("element {k} is not counterclockwise")));
            }
        }

        let mut lookup: HashMap<(usize, usize), usize> = HashMap::new();
        let mut sides: Vec<Vec<FaceSide>> = Vec::new();
        let mut keys: Vec<(usize, usize)> = Vec::new();
        let mut element_faces = vec![[usize::MAX; 3]; elements.len()];
        for (k, el) in elements.iter().enumerate() {
            for e in 0..3 {
                let (a, b) = el.edge(e);
                let key = edge_key(a, b);
                let id = *lookup.entry(key).or_insert_with(|| {
                    sides.push(Vec::new());
                    keys.push(key);
                    sides.len() - 1
                });
                sides[id].push(FaceSide {
                    element: k,
                    local_edge: e,
                });
                element_faces[k][e] = id;
            }
        }

        let mut faces = Vec::with_capacity(keys.len());
        for (id, (key, adj)) in keys.iter().zip(&sides).enumerate() {
            let (pa, pb) = (vertices[key.0], vertices[key.1]);
            let outward_of = |s: &FaceSide| {
                let (a, b) = elements[s.element].edge(s.local_edge);
                let [dx, dy] = vertices[b].sub(vertices[a]);
                [dy, -dx]
            };
            let face = match adj.as_slice() {
                [s] => Face {
                    vertices: [key.0, key.1],
                    kind: FaceKind::Boundary,
                    minus: *s,
                    plus: None,
                    normal: face_normal(pa, pb, FaceKind::Boundary, outward_of(s))
                        .map_err(|_| Error::DegenerateFace(key.0, key.1))?,
                },
                [s0, s1] => {
                    let n = face_normal(pa, pb, FaceKind::Interior, [0.0, 0.0])
                        .map_err(|_| Error::DegenerateFace(key.0, key.1))?;
                    let o = outward_of(s0);
                    let (minus, plus) = if n[0] * o[0] + n[1] * o[1] > 0.0 {
                        (*s0, *s1)
                    } else {
                        (*s1, *s0)
                    };
                    Face {
                        vertices: [key.0, key.1],
                        kind: FaceKind::Interior,
                        minus,
                        plus: Some(plus),
                        normal: n,
                    }
                }
                _ => {
                    return Err(Error::Mesh(format!(
                        "face {id} ({}, {}) shared by {} elements",
                        key.0,
                        key.1,
                        adj.len()
                    )))
                }
            };
            faces.push(face);
        }

        let mesh = MeshLevel {
            vertices,
            elements,
            faces,
            element_faces,
            index,
        };
        mesh.check_conforming()?;
        Ok(mesh)
    }

    pub fn num_elements(&self) -> usize {
        self.elements.len()
    }

    pub fn element_points(&self, k: usize) -> [Point2; 3] {
        self.elements[k].vertices.map(|v| self.vertices[v])
    }

    pub fn area(&self, k: usize) -> f64 {
        let [a, b, c] = self.element_points(k);
        signed_area(a, b, c)
    }

    pub fn face_points(&self, f: usize) -> [Point2; 2] {
        self.faces[f].vertices.map(|v| self.vertices[v])
    }

    pub fn face_length(&self, f: usize) -> f64 {
        let [a, b] = self.face_points(f);
        a.dist(b)
    }

    /// Elements sharing a face with `k`.
    pub fn neighbors(&self, k: usize) -> impl Iterator<Item = usize> + '_ {
        self.element_faces[k].iter().filter_map(move |&f| {
            let face = &self.faces[f];
            face.sides().map(|s| s.element).find(|&e| e != k)
        })
    }

    pub fn sizes(&self) -> SizeData {
        let h_element: Vec<f64> = (0..self.num_elements()).map(|k| self.area(k).sqrt()).collect();
        let h_face: Vec<f64> = (0..self.faces.len()).map(|f| self.face_length(f)).collect();
        let mut max_adjacent_ratio: f64 = 1.0;
        for (f, face) in self.faces.iter().enumerate() {
            for s in face.sides() {
                let r = h_element[s.element] / h_face[f];
                max_adjacent_ratio = max_adjacent_ratio.max(r).max(1.0 / r);
            }
        }
        SizeData {
            h_element,
            h_face,
            max_adjacent_ratio,
        }
    }

    pub fn total_area(&self) -> f64 {
        (0..self.num_elements()).map(|k| self.area(k)).sum()
    }

    /// Every interior face has two distinct neighbors inducing the same vertex
    /// pair, and every boundary vertex pair belongs to exactly one element.
    pub fn check_conforming(&self) -> Result<()> {
        let mut vertex_on_edge: HashSet<usize> = HashSet::new();
        for face in &self.faces {
            vertex_on_edge.extend(face.vertices);
            let key = edge_key(face.vertices[0], face.vertices[1]);
            for s in face.sides() {
                let (a, b) = self.elements[s.element].edge(s.local_edge);
                if edge_key(a, b) != key {
                    return Err(Error::Mesh("face/element vertex mismatch".into()));
                }
            }
            if let Some(p) = face.plus {
                if p.element == face.minus.element {
                    return Err(Error::Mesh("face adjacent to the same element twice".into()));
                }
            }
        }
        // A hanging node lies in the interior of some face.
        for face in self.faces.iter().filter(|f| f.is_boundary()) {
            let [a, b] = face.vertices.map(|v| self.vertices[v]);
            let len = a.dist(b);
            for (vid, v) in self.vertices.iter().enumerate() {
                if face.vertices.contains(&vid) {
                    continue;
                }
                let on_line = signed_area(a, b, *v).abs() <= 1e-14 * len * len;
                let t = ((v.x - a.x) * (b.x - a.x) + (v.y - a.y) * (b.y - a.y)) / (len * len);
                if on_line && t > 1e-12 && t < 1.0 - 1e-12 {
                    return Err(Error::Mesh(format!("hanging node {vid} on boundary face")));
                }
            }
        }
        let unused = self.vertices.len() - vertex_on_edge.len();
        if unused != 0 {
            return Err(Error::Mesh(format!("{unused} vertices not attached to any element")));
        }
        Ok(())
    }

    pub fn shape_stats(&self) -> ShapeStats {
        let mut min_angle = f64::INFINITY;
        let mut max_aspect: f64 = 0.0;
        for k in 0..self.num_elements() {
            let p = self.element_points(k);
            let lens: [f64; 3] = std::array::from_fn(|e| p[(e + 1) % 3].dist(p[(e + 2) % 3]));
            for e in 0..3 {
                let (a, b, c) = (lens[e], lens[(e + 1) % 3], lens[(e + 2) % 3]);
                let cos = ((b * b + c * c - a * a) / (2.0 * b * c)).clamp(-1.0, 1.0);
                min_angle = min_angle.min(cos.acos());
            }
            let area = self.area(k);
            let longest = lens.iter().cloned().fold(0.0, f64::max);
            // Shortest altitude is the one onto the longest edge.
            let altitude = 2.0 * area / longest;
            max_aspect = max_aspect.max(longest / altitude);
        }
        ShapeStats {
            min_angle,
            max_aspect,
        }
    }

    /// Refines every marked element by newest-vertex bisection and closes the
    /// result to a conforming mesh.
    pub fn refine(&self, marked: &[usize]) -> Result<MeshLevel> {
        let mut marked_edges: HashSet<(usize, usize)> = HashSet::new();
        for &k in marked {
            let el = self
                .elements
                .get(k)
                .ok_or_else(|| Error::Mesh(format!("marked element {k} out of range")))?;
            let (a, b) = el.edge(el.refinement_edge);
            marked_edges.insert(edge_key(a, b));
        }

        // Closure: an element with any marked edge must also bisect its refinement edge.
        let max_sweeps = self.faces.len() + 1;
        let mut sweeps = 0;
        loop {
            let mut changed = false;
            for el in &self.elements {
                let (a, b) = el.edge(el.refinement_edge);
                let key = edge_key(a, b);
                if marked_edges.contains(&key) {
                    continue;
                }
                let any = (0..3).any(|e| {
                    let (x, y) = el.edge(e);
                    marked_edges.contains(&edge_key(x, y))
                });
                if any {
                    marked_edges.insert(key);
                    changed = true;
                }
            }
            if !changed {
                break;
            }
            sweeps += 1;
            if sweeps > max_sweeps {
                return Err(Error::ClosureOverflow(sweeps));
            }
        }

        let mut vertices = self.vertices.clone();
        let mut midpoints: HashMap<(usize, usize), usize> = HashMap::new();
        let mut elements = Vec::with_capacity(self.elements.len() + 2 * marked_edges.len());
        for (k, el) in self.elements.iter().enumerate() {
            let r = el.refinement_edge;
            let tri = [el.vertices[r], el.vertices[(r + 1) % 3], el.vertices[(r + 2) % 3]];
            bisect_recursive(
                tri,
                el.level,
                k,
                &marked_edges,
                &mut midpoints,
                &mut vertices,
                &mut elements,
            );
        }
        MeshLevel::from_parts(vertices, elements, self.index + 1)
    }

    /// Bisects every element `rounds` times.
    pub fn refine_uniform(&self, rounds: usize) -> Result<MeshLevel> {
        let mut mesh = self.clone();
        for _ in 0..rounds {
            let all: Vec<usize> = (0..mesh.num_elements()).collect();
            let mut next = mesh.refine(&all)?;
            // Keep the index advancing by one per call, and parents pointing into `self`.
            if mesh.index != self.index {
                for el in next.elements.iter_mut() {
                    el.parent = el.parent.and_then(|p| mesh.elements[p].parent);
                }
            }
            next.index = self.index + 1;
            mesh = next;
        }
        Ok(mesh)
    }

    /// Writes the plain-text mesh format: a header line, `v x y` lines and `e i j k` lines.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "mesh d=2 nv={} ne={}", self.vertices.len(), self.elements.len());
        for v in &self.vertices {
            let _ = writeln!(s, "v {:.17e} {:.17e}", v.x, v.y);
        }
        for e in &self.elements {
            let [a, b, c] = e.vertices;
            let _ = writeln!(s, "e {a} {b} {c}");
        }
        s
    }

    /// Parses the plain-text mesh format. Refinement edges default to the longest edge.
    pub fn from_text(text: &str) -> Result<MeshLevel> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| Error::Mesh("empty mesh file".into()))?;
        let mut nv = None;
        let mut ne = None;
        let mut it = header.split_whitespace();
        if it.next() != Some("mesh") {
            return Err(Error::Mesh("missing `mesh` header".into()));
        }
        for tok in it {
            if let Some(v) = tok.strip_prefix("nv=") {
                nv = v.parse::<usize>().ok();
            } else if let Some(v) = tok.strip_prefix("ne=") {
                ne = v.parse::<usize>().ok();
            } else if tok != "d=2" {
                return Err(Error::Mesh(format!("unexpected header token `{tok}`")));
            }
        }
        let (nv, ne) = nv.zip(ne).ok_or_else(|| Error::Mesh("header needs nv= and ne=".into()))?;
        let bad = |l: &str| Error::Mesh(format!("malformed line `{l}`"));
        let mut vertices = Vec::with_capacity(nv);
        let mut elements = Vec::with_capacity(ne);
        for line in lines {
            let toks: Vec<&str> = line.split_whitespace().collect();
            match toks.as_slice() {
                ["v", x, y] => vertices.push(Point2::new(
                    x.parse().map_err(|_| bad(line))?,
                    y.parse().map_err(|_| bad(line))?,
                )),
                ["e", i, j, k] => {
                    let vs: [usize; 3] = [
                        i.parse().map_err(|_| bad(line))?,
                        j.parse().map_err(|_| bad(line))?,
                        k.parse().map_err(|_| bad(line))?,
                    ];
                    elements.push(vs);
                }
                _ => return Err(bad(line)),
            }
        }
        if vertices.len() != nv || elements.len() != ne {
            return Err(Error::Mesh("vertex/element counts do not match header".into()));
        }
        let elements = elements
            .into_iter()
            .map(|vs| {
                if vs.iter().any(|&v| v >= nv) {
                    return Err(Error::Mesh("element references unknown vertex".into()));
                }
                let p = vs.map(|v| vertices[v]);
                let lens: [f64; 3] = std::array::from_fn(|e| p[(e + 1) % 3].dist(p[(e + 2) % 3]));
                let longest = (0..3).max_by(|&a, &b| lens[a].total_cmp(&lens[b])).unwrap();
                Ok(Element {
                    vertices: vs,
                    refinement_edge: longest,
                    parent: None,
                    level: 0,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        MeshLevel::from_parts(vertices, elements, 0)
    }

    /// Legacy VTK unstructured grid with optional per-element scalar data.
    pub fn write_vtk(&self, path: &Path, cell_data: Option<(&str, &[f64])>) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "# vtk DataFile Version 3.0")?;
        writeln!(out, "mesh level {}", self.index)?;
        writeln!(out, "ASCII")?;
        writeln!(out, "DATASET UNSTRUCTURED_GRID")?;
        writeln!(out, "POINTS {} double", self.vertices.len())?;
        for v in &self.vertices {
            writeln!(out, "{:.17e} {:.17e} 0", v.x, v.y)?;
        }
        let ne = self.elements.len();
        writeln!(out, "CELLS {} {}", ne, 4 * ne)?;
        for e in &self.elements {
            let [a, b, c] = e.vertices;
            writeln!(out, "3 {a} {b} {c}")?;
        }
        writeln!(out, "CELL_TYPES {ne}")?;
        for _ in 0..ne {
            writeln!(out, "5")?;
        }
        if let Some((name, data)) = cell_data {
            writeln!(out, "CELL_DATA {ne}")?;
            writeln!(out, "SCALARS {name} double 1")?;
            writeln!(out, "LOOKUP_TABLE default")?;
            for d in data {
                writeln!(out, "{d:.17e}")?;
            }
        }
        Ok(())
    }
}

/// `tri` is ordered (newest, b, c): the refinement edge is (b, c).
fn bisect_recursive(
    tri: [usize; 3],
    level: u32,
    parent: usize,
    marked: &HashSet<(usize, usize)>,
    midpoints: &mut HashMap<(usize, usize), usize>,
    vertices: &mut Vec<Point2>,
    out: &mut Vec<Element>,
) {
    let [a, b, c] = tri;
    let key = edge_key(b, c);
    if !marked.contains(&key) {
        out.push(Element {
            vertices: tri,
            refinement_edge: 0,
            parent: Some(parent),
            level,
        });
        return;
    }
    let m = *midpoints.entry(key).or_insert_with(|| {
        vertices.push(vertices[b].midpoint(vertices[c]));
        vertices.len() - 1
    });
    bisect_recursive([m, a, b], level + 1, parent, marked, midpoints, vertices, out);
    bisect_recursive([m, c, a], level + 1, parent, marked, midpoints, vertices, out);
}
