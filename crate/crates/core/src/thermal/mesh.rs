//! Structured triangulation of a rectangular cross-section with a rectangular
//! hole, with tagged boundary edges and located sensor probes.
//!
//! Grid lines run through the hole corners and the sensor positions, so the
//! hole is resolved exactly and sensors sit on nodes.
//! Every cell is split into two right triangles; the diagonal direction is
//! mirrored about the vertical centre line so that a centred hole yields a
//! mirror-symmetric mesh. Right triangles give a stiffness matrix with
//! nonpositive off-diagonal entries.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CrossSectionSpec {
    pub outer_width: f64,
    pub outer_height: f64,
    pub hole_width: f64,
    pub hole_height: f64,
    /// Lower-left corner of the hole.
    pub hole_x: f64,
    pub hole_y: f64,
    /// Target mesh edge length (meters).
    pub edge_length: f64,
    pub probes: ProbeDepths,
}

impl Default for CrossSectionSpec {
    fn default() -> Self {
        Self {
            outer_width: 4.0,
            outer_height: 1.5,
            hole_width: 3.3,
            hole_height: 0.9,
            hole_x: 0.35,
            hole_y: 0.3,
            edge_length: 0.035,
            probes: ProbeDepths::default(),
        }
    }
}

/// Depth of each sensor, measured from the hole surface into the concrete.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeDepths {
    pub bottom: f64,
    pub top: f64,
    pub south: f64,
    pub north: f64,
}

impl Default for ProbeDepths {
    fn default() -> Self {
        Self {
            bottom: 0.20,
            top: 0.015,
            south: 0.05,
            north: 0.15,
        }
    }
}

impl CrossSectionSpec {
    pub fn with_edge_length(mut self, h: f64) -> Self {
        self.edge_length = h;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.outer_width,
            self.outer_height,
            self.hole_width,
            self.hole_height,
            self.hole_x,
            self.hole_y,
            self.edge_length,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("cross-section dimensions must be finite"));
        }
        if !(self.outer_width > 0.0 && self.outer_height > 0.0) {
            return Err(Error::invalid("outer rectangle must have positive size"));
        }
        if !(self.hole_width > 0.0 && self.hole_height > 0.0) {
            return Err(Error::invalid("hole must have positive size"));
        }
        if !(self.hole_x > 0.0
            && self.hole_y > 0.0
            && self.hole_x + self.hole_width < self.outer_width
            && self.hole_y + self.hole_height < self.outer_height)
        {
            return Err(Error::invalid("hole must lie strictly inside the outer rectangle"));
        }
        let thinnest = [
            self.hole_x,
            self.hole_y,
            self.outer_width - self.hole_x - self.hole_width,
            self.outer_height - self.hole_y - self.hole_height,
        ]
        .into_iter()
        .fold(f64::INFINITY, f64::min);
        if !(self.edge_length > 0.0 && self.edge_length <= thinnest) {
            return Err(Error::invalid(format!(
                "edge length must be in (0, {thinnest}] (thinnest wall)"
            )));
        }
        let p = &self.probes;
        let walls = [
            (p.bottom, self.hole_y, "bottom"),
            (p.top, self.outer_height - self.hole_y - self.hole_height, "top"),
            (p.south, self.hole_x, "south"),
            (p.north, self.outer_width - self.hole_x - self.hole_width, "north"),
        ];
        for (depth, wall, name) in walls {
            if !(depth > 0.0 && depth < wall) {
                return Err(Error::invalid(format!(
                    "{name} probe depth {depth} must lie inside its {wall} m wall"
                )));
            }
        }
        Ok(())
    }

    /// `area / (edge^2 sqrt(3)/4 * 2)`: vertex count of an equilateral mesh.
    pub fn vertex_estimate(&self) -> f64 {
        let area = self.outer_width * self.outer_height - self.hole_width * self.hole_height;
        area / (self.edge_length * self.edge_length * 3f64.sqrt() / 4.0 * 2.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryTag {
    /// Hole surface, exposed to the interior air.
    Interior,
    /// Outer surface except the top edge.
    Exterior,
    /// Top outer edge, exposed to solar irradiation.
    Sun,
}

pub const SENSOR_NAMES: [&str; 4] = ["bottom", "top", "south", "north"];

/// A sensor location with its interpolation stencil.
#[derive(Clone, Debug, PartialEq)]
pub struct SensorProbe {
    pub name: &'static str,
    pub point: [f64; 2],
    pub nodes: [usize; 3],
    pub weights: [f64; 3],
}

#[derive(Clone, Debug)]
pub struct Mesh {
    pub nodes: Vec<[f64; 2]>,
    pub triangles: Vec<[usize; 3]>,
    pub boundary: Vec<(usize, usize, BoundaryTag)>,
    pub probes: Vec<SensorProbe>,
}

/// Breakpoints of one axis, each segment split into `ceil(len / h)` parts.
/// The segment containing `centre` gets an even count so that the centre is
/// a grid line.
fn axis(breaks: &[f64], h: f64, centre: Option<f64>) -> Vec<f64> {
    let mut xs = vec![breaks[0]];
    for w in breaks.windows(2) {
        let len = w[1] - w[0];
        let mut parts = (len / h - 1e-9).ceil().max(1.0) as usize;
        if let Some(c) = centre {
            if w[0] < c && c < w[1] && parts % 2 == 1 {
                parts += 1;
            }
        }
        for k in 1..parts {
            xs.push(w[0] + len * k as f64 / parts as f64);
        }
        xs.push(w[1]);
    }
    xs
}

fn index_of(xs: &[f64], v: f64) -> usize {
    xs.iter()
        .position(|x| (x - v).abs() < 1e-9)
        .expect("breakpoint is a grid line")
}

/// Largest `i` with `xs[i] <= v`, capped so that `i + 1` is valid.
fn cell_index(xs: &[f64], v: f64) -> usize {
    let i = xs.partition_point(|x| *x <= v);
    i.saturating_sub(1).min(xs.len() - 2)
}

pub fn build_mesh(spec: &CrossSectionSpec) -> Result<Mesh> {
    spec.validate()?;
    let (w, hgt) = (spec.outer_width, spec.outer_height);
    let (x0, x1) = (spec.hole_x, spec.hole_x + spec.hole_width);
    let (y0, y1) = (spec.hole_y, spec.hole_y + spec.hole_height);
    let mid = w / 2.0;

    // Probe coordinates are grid lines too, so probes sit on nodes.
    let p = &spec.probes;
    let yc = (y0 + y1) / 2.0;
    let mut xb = vec![0.0, x0, x1, w, x0 - p.south, x1 + p.north];
    let yb = vec![0.0, y0, y1, hgt, y0 - p.bottom, y1 + p.top, yc];
    let symmetric = ((x0 + x1) / 2.0 - mid).abs() < 1e-12;
    if symmetric {
        xb.extend([w - (x0 - p.south), w - (x1 + p.north)]);
    }
    let sorted = |mut v: Vec<f64>| {
        v.sort_by(f64::total_cmp);
        v.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
        v
    };
    let mut xs = axis(&sorted(xb), spec.edge_length, Some(mid));
    // Mirror the left half so that the grid is symmetric to rounding.
    if symmetric {
        let n = xs.len();
        for i in 0..n / 2 {
            xs[n - 1 - i] = w - xs[i];
        }
        if n % 2 == 1 {
            xs[n / 2] = mid;
        }
    }
    let ys = axis(&sorted(yb), spec.edge_length, None);
    let (nx, ny) = (xs.len() - 1, ys.len() - 1);
    let (hx0, hx1) = (index_of(&xs, x0), index_of(&xs, x1));
    let (hy0, hy1) = (index_of(&ys, y0), index_of(&ys, y1));
    let in_hole = |i: usize, j: usize| i >= hx0 && i < hx1 && j >= hy0 && j < hy1;
    let active = |i: isize, j: isize| {
        i >= 0 && j >= 0 && (i as usize) < nx && (j as usize) < ny && !in_hole(i as usize, j as usize)
    };

    // Node numbering column by column keeps the matrix bandwidth near `ny`.
    let mut id = vec![usize::MAX; (nx + 1) * (ny + 1)];
    let mut nodes = Vec::new();
    for i in 0..=nx {
        for j in 0..=ny {
            let (ii, jj) = (i as isize, j as isize);
            let used = active(ii - 1, jj - 1) || active(ii, jj - 1) || active(ii - 1, jj) || active(ii, jj);
            if used {
                id[i * (ny + 1) + j] = nodes.len();
                nodes.push([xs[i], ys[j]]);
            }
        }
    }
    let node = |i: usize, j: usize| id[i * (ny + 1) + j];

    let mut triangles = Vec::with_capacity(2 * nx * ny);
    for i in 0..nx {
        for j in 0..ny {
            if in_hole(i, j) {
                continue;
            }
            let (a, b, c, d) = (node(i, j), node(i + 1, j), node(i + 1, j + 1), node(i, j + 1));
            if (xs[i] + xs[i + 1]) / 2.0 < mid {
                triangles.push([a, b, c]);
                triangles.push([a, c, d]);
            } else {
                triangles.push([a, b, d]);
                triangles.push([b, c, d]);
            }
        }
    }

    let mut boundary = Vec::new();
    let on_outer = |i: usize, j: usize, horizontal: bool| {
        if horizontal {
            j == 0 || j == ny
        } else {
            i == 0 || i == nx
        }
    };
    let tag_for = |outer: bool, top: bool| match (outer, top) {
        (false, _) => BoundaryTag::Interior,
        (true, true) => BoundaryTag::Sun,
        (true, false) => BoundaryTag::Exterior,
    };
    // Horizontal edges (i,j)-(i+1,j): cells below (i,j-1) and above (i,j).
    for i in 0..nx {
        for j in 0..=ny {
            let below = active(i as isize, j as isize - 1);
            let above = active(i as isize, j as isize);
            if below != above {
                let tag = tag_for(on_outer(i, j, true), j == ny);
                boundary.push((node(i, j), node(i + 1, j), tag));
            }
        }
    }
    // Vertical edges (i,j)-(i,j+1): cells left (i-1,j) and right (i,j).
    for i in 0..=nx {
        for j in 0..ny {
            let left = active(i as isize - 1, j as isize);
            let right = active(i as isize, j as isize);
            if left != right {
                let tag = tag_for(on_outer(i, j, false), false);
                boundary.push((node(i, j), node(i, j + 1), tag));
            }
        }
    }

    let mut mesh = Mesh {
        nodes,
        triangles,
        boundary,
        probes: Vec::new(),
    };
    let points = [
        [mid, y0 - p.bottom],
        [mid, y1 + p.top],
        [x0 - p.south, yc],
        [x1 + p.north, yc],
    ];
    for (name, point) in SENSOR_NAMES.iter().zip(points) {
        let probe = locate(&mesh, &xs, &ys, &node, point, mid)
            .ok_or_else(|| Error::invalid(format!("{name} probe lies outside the section")))?;
        mesh.probes.push(SensorProbe { name, ..probe });
    }
    Ok(mesh)
}

fn locate(
    mesh: &Mesh,
    xs: &[f64],
    ys: &[f64],
    node: &dyn Fn(usize, usize) -> usize,
    p: [f64; 2],
    mid: f64,
) -> Option<SensorProbe> {
    let (i, j) = (cell_index(xs, p[0]), cell_index(ys, p[1]));
    let corners = [node(i, j), node(i + 1, j), node(i + 1, j + 1), node(i, j + 1)];
    if corners.contains(&usize::MAX) {
        return None;
    }
    let [a, b, c, d] = corners;
    let candidates = if (xs[i] + xs[i + 1]) / 2.0 < mid {
        [[a, b, c], [a, c, d]]
    } else {
        [[a, b, d], [b, c, d]]
    };
    for tri in candidates {
        let w = barycentric(&mesh.nodes, tri, p);
        if w.iter().all(|v| *v >= -1e-12) {
            return Some(SensorProbe {
                name: "",
                point: p,
                nodes: tri,
                weights: w,
            });
        }
    }
    None
}

pub(crate) fn barycentric(nodes: &[[f64; 2]], tri: [usize; 3], p: [f64; 2]) -> [f64; 3] {
    let [a, b, c] = tri.map(|k| nodes[k]);
    let det = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]);
    let l1 = ((b[0] - p[0]) * (c[1] - p[1]) - (c[0] - p[0]) * (b[1] - p[1])) / det;
    let l2 = ((c[0] - p[0]) * (a[1] - p[1]) - (a[0] - p[0]) * (c[1] - p[1])) / det;
    [l1, l2, 1.0 - l1 - l2]
}

impl Mesh {
    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t].map(|k| self.nodes[k]);
        0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
    }

    pub fn tag_length(&self, tag: BoundaryTag) -> f64 {
        self.boundary
            .iter()
            .filter(|e| e.2 == tag)
            .map(|&(a, b, _)| {
                let (p, q) = (self.nodes[a], self.nodes[b]);
                (p[0] - q[0]).hypot(p[1] - q[1])
            })
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use std::collections::HashMap;

    use super::*;

    fn coarse() -> CrossSectionSpec {
        CrossSectionSpec::default().with_edge_length(0.08)
    }

    #[test]
    fn triangles_cover_the_section() {
        let spec = coarse();
        let m = build_mesh(&spec).unwrap();
        let area: f64 = (0..m.n_triangles()).map(|t| m.triangle_area(t)).sum();
        let expected = 4.0 * 1.5 - 3.3 * 0.9;
        assert!((area - expected).abs() < 1e-10, "{area}");
        assert!((0..m.n_triangles()).all(|t| m.triangle_area(t) > 0.0));
    }

    #[test]
    fn vertex_count_near_estimate() {
        for h in [0.08, 0.05] {
            let spec = CrossSectionSpec::default().with_edge_length(h);
            let m = build_mesh(&spec).unwrap();
            let ratio = m.n_nodes() as f64 / spec.vertex_estimate();
            assert!((0.5..=2.0).contains(&ratio), "h={h} ratio={ratio}");
        }
    }

    #[test]
    fn default_mesh_has_moderate_size() {
        let m = build_mesh(&CrossSectionSpec::default()).unwrap();
        assert!((1800..=3500).contains(&m.n_nodes()), "{}", m.n_nodes());
    }

    #[test]
    fn boundary_tags_partition_the_boundary() {
        let m = build_mesh(&coarse()).unwrap();
        // Boundary edges are exactly the edges used by a single triangle.
        let mut count: HashMap<(usize, usize), usize> = HashMap::new();
        for t in &m.triangles {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                *count.entry((a.min(b), a.max(b))).or_default() += 1;
            }
        }
        let mut single: Vec<_> = count.into_iter().filter(|(_, c)| *c == 1).map(|(e, _)| e).collect();
        let mut tagged: Vec<_> = m.boundary.iter().map(|&(a, b, _)| (a.min(b), a.max(b))).collect();
        single.sort();
        tagged.sort();
        let before = tagged.len();
        tagged.dedup();
        assert_eq!(before, tagged.len(), "an edge carries two tags");
        assert_eq!(single, tagged);

        assert!((m.tag_length(BoundaryTag::Sun) - 4.0).abs() < 1e-10);
        assert!((m.tag_length(BoundaryTag::Exterior) - (4.0 + 2.0 * 1.5)).abs() < 1e-10);
        assert!((m.tag_length(BoundaryTag::Interior) - 2.0 * (3.3 + 0.9)).abs() < 1e-10);
    }

    #[test]
    fn probes_sit_at_their_depths() {
        let spec = coarse();
        let m = build_mesh(&spec).unwrap();
        let names: Vec<_> = m.probes.iter().map(|p| p.name).collect();
        assert_eq!(names, SENSOR_NAMES);
        assert!((m.probes[0].point[1] - (0.3 - 0.20)).abs() < 1e-12);
        assert!((m.probes[1].point[1] - (1.2 + 0.015)).abs() < 1e-12);
        assert!((m.probes[2].point[0] - (0.35 - 0.05)).abs() < 1e-12);
        assert!((m.probes[3].point[0] - (3.65 + 0.15)).abs() < 1e-12);
        for p in &m.probes {
            let s: f64 = p.weights.iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
            let back = p.nodes.iter().zip(p.weights).fold([0.0, 0.0], |acc, (&k, w)| {
                [acc[0] + w * m.nodes[k][0], acc[1] + w * m.nodes[k][1]]
            });
            assert!((back[0] - p.point[0]).abs() < 1e-12 && (back[1] - p.point[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn mesh_is_mirror_symmetric() {
        let m = build_mesh(&coarse()).unwrap();
        let mut pts: Vec<(i64, i64)> = m.nodes.iter().map(|p| ((p[0] * 1e9).round() as i64, (p[1] * 1e9).round() as i64)).collect();
        let mut mirrored: Vec<(i64, i64)> = m.nodes.iter().map(|p| (((4.0 - p[0]) * 1e9).round() as i64, (p[1] * 1e9).round() as i64)).collect();
        pts.sort();
        mirrored.sort();
        assert_eq!(pts, mirrored);
    }

    #[test]
    fn degenerate_geometry_rejected() {
        let mut s = coarse();
        s.hole_width = 3.9;
        assert!(build_mesh(&s).is_err());
        let mut s = coarse();
        s.probes.bottom = 0.5;
        assert!(build_mesh(&s).is_err());
        let mut s = coarse();
        s.edge_length = 0.0;
        assert!(build_mesh(&s).is_err());
    }
}
