//! Metric graph of a channel: spine and wing edges glued at junction vertices.

use serde::Serialize;

use crate::channel::{ChannelShape, Side};
use crate::error::{Error, Result};
use crate::output::Table;
use crate::profile::{scale_measure, speed_measure, Width, WidthProfile};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeKind {
    Spine,
    Wing,
}

#[derive(Debug, Clone, Serialize)]
pub struct Edge {
    /// `±(2k - 1)` for spine edges and `±2k` for wings, sign by side.
    pub id: i64,
    pub kind: EdgeKind,
    pub side: Side,
    /// Zero-based cell index within the side.
    pub cell: usize,
    /// Physical x of the local origin.
    pub origin_x: f64,
    /// Physical direction of increasing local coordinate.
    pub direction: f64,
    /// Width as a function of the local coordinate in `[0, length]`.
    pub profile: WidthProfile,
    /// Vertex at local 0 and at local `length`.
    pub endpoints: (usize, usize),
}

impl Edge {
    pub fn length(&self) -> f64 {
        self.profile.length
    }

    /// The edge interval in signed coordinates: `[0, r]` or `[r, 0]`.
    pub fn interval(&self) -> (f64, f64) {
        let r = self.direction * self.length();
        (r.min(0.0), r.max(0.0))
    }

    pub fn physical_x(&self, local: f64) -> f64 {
        self.origin_x + self.direction * local
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum VertexKind {
    /// Branch point joining two spine edges and one wing.
    Interior,
    /// Wing tip.
    Exterior,
    /// Pass-through point of the spine at the origin.
    Joint,
}

#[derive(Debug, Clone, Serialize)]
pub struct Incidence {
    pub edge: usize,
    /// True when the vertex sits at the edge's local 0.
    pub at_start: bool,
    /// Gluing weight: the edge width at this vertex.
    pub weight: f64,
}

impl Incidence {
    /// +1 when the edge leaves the vertex in its increasing direction.
    pub fn sign(&self) -> f64 {
        if self.at_start {
            1.0
        } else {
            -1.0
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Vertex {
    pub id: usize,
    pub kind: VertexKind,
    pub x: f64,
    pub incident: Vec<Incidence>,
    /// `(alpha, beta, gamma, wing_r)` at branch points.
    pub junction: Option<(f64, f64, f64, f64)>,
}

#[derive(Debug, Clone, Serialize)]
pub struct MetricGraph {
    pub edges: Vec<Edge>,
    pub vertices: Vec<Vertex>,
    /// Spine edge indices ordered by increasing x.
    pub spine: Vec<usize>,
}

impl MetricGraph {
    pub fn edge_by_id(&self, id: i64) -> Option<&Edge> {
        self.edges.iter().find(|e| e.id == id)
    }

    pub fn count(&self, kind: VertexKind) -> usize {
        self.vertices.iter().filter(|v| v.kind == kind).count()
    }

    /// Largest defect of `alpha - beta - sign(r) gamma` over branch points,
    /// relative to the largest weight.
    pub fn max_junction_defect(&self) -> f64 {
        self.vertices
            .iter()
            .filter_map(|v| v.junction)
            .map(|(a, b, g, r)| (a - b - r.signum() * g).abs() / a.max(b).max(g))
            .fold(0.0, f64::max)
    }

    /// Pretty JSON adjacency listing.
    pub fn dump(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable")
    }

    /// `(edge, x, l, p, m)` on `n` points per edge.
    pub fn measures_table(&self, n: usize) -> Result<Table> {
        let mut t = Table::new(&["edge", "x", "l", "p", "m"]);
        for e in &self.edges {
            let (a, b) = e.interval();
            for i in 0..n {
                let x = a + (b - a) * i as f64 / (n - 1).max(1) as f64;
                let m = measures(e, x)?;
                t.push(vec![
                    e.id.to_string(),
                    x.to_string(),
                    e.profile.width(x.abs().min(e.length())).to_string(),
                    m.p.to_string(),
                    m.m.to_string(),
                ]);
            }
        }
        Ok(t)
    }
}

/// Builds the graph. The outermost branch point on each side keeps all three
/// weights but only two edges; the missing spine continuation is treated as
/// a zero-flux truncation.
pub fn build_graph(shape: &ChannelShape) -> Result<MetricGraph> {
    let violations = crate::channel::validate(shape, &Default::default());
    if let Some(v) = violations.first() {
        return Err(Error::InvalidShape(format!("{v} ({} violations)", violations.len())));
    }
    let mut edges = Vec::new();
    let mut vertices = vec![Vertex { id: 0, kind: VertexKind::Joint, x: 0.0, incident: Vec::new(), junction: None }];
    let mut spine_neg = Vec::new();
    let mut spine_pos = Vec::new();
    for side in [Side::Plus, Side::Minus] {
        let cells = match side {
            Side::Plus => &shape.positive,
            Side::Minus => &shape.negative,
        };
        let s = side.sign();
        let mut inner_vertex = 0usize;
        let mut inner_x = 0.0;
        for (k, c) in cells.iter().enumerate() {
            let outer_x = inner_x + s * c.spine_length;
            let jv = vertices.len();
            vertices.push(Vertex {
                id: jv,
                kind: VertexKind::Interior,
                x: outer_x,
                incident: Vec::new(),
                junction: Some((c.alpha, c.beta, c.gamma, c.wing_r)),
            });
            let n = (k + 1) as i64;
            let spine_idx = edges.len();
            let (left_v, right_v, left_x) = if s > 0.0 { (inner_vertex, jv, inner_x) } else { (jv, inner_vertex, outer_x) };
            edges.push(Edge {
                id: s as i64 * (2 * n - 1),
                kind: EdgeKind::Spine,
                side,
                cell: k,
                origin_x: left_x,
                direction: 1.0,
                profile: c.spine_profile.clone(),
                endpoints: (left_v, right_v),
            });
            let wl = c.spine_profile.start_width();
            let wr = c.spine_profile.end_width();
            vertices[left_v].incident.push(Incidence { edge: spine_idx, at_start: true, weight: wl });
            vertices[right_v].incident.push(Incidence { edge: spine_idx, at_start: false, weight: wr });
            if s > 0.0 {
                spine_pos.push(spine_idx);
            } else {
                spine_neg.push(spine_idx);
            }
            let tv = vertices.len();
            vertices.push(Vertex {
                id: tv,
                kind: VertexKind::Exterior,
                x: outer_x + c.wing_r,
                incident: Vec::new(),
                junction: None,
            });
            let wing_idx = edges.len();
            edges.push(Edge {
                id: s as i64 * 2 * n,
                kind: EdgeKind::Wing,
                side,
                cell: k,
                origin_x: outer_x,
                direction: c.wing_r.signum(),
                profile: c.wing_profile.clone(),
                endpoints: (jv, tv),
            });
            vertices[jv].incident.push(Incidence { edge: wing_idx, at_start: true, weight: c.gamma });
            vertices[tv].incident.push(Incidence {
                edge: wing_idx,
                at_start: false,
                weight: c.wing_profile.end_width(),
            });
            inner_vertex = jv;
            inner_x = outer_x;
        }
    }
    spine_neg.reverse();
    spine_neg.extend(spine_pos);
    Ok(MetricGraph { edges, vertices, spine: spine_neg })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Measures {
    pub p: f64,
    pub m: f64,
    pub dp_dx: f64,
    pub dm_dx: f64,
}

/// Scale and speed measure at signed coordinate `x` of the edge interval,
/// measured from the local origin.
pub fn measures(edge: &Edge, x: f64) -> Result<Measures> {
    let (a, b) = edge.interval();
    let slack = 1e-14 * edge.length();
    if !(x >= a - slack && x <= b + slack) {
        return Err(Error::Domain(format!("x = {x} outside edge {} interval [{a}, {b}]", edge.id)));
    }
    let d = x.abs().min(edge.length());
    let s = if x < 0.0 { -1.0 } else { 1.0 };
    let l = edge.profile.width(d);
    Ok(Measures {
        p: s * scale_measure(&edge.profile, d),
        m: s * speed_measure(&edge.profile, d),
        dp_dx: 1.0 / l,
        dm_dx: 2.0 * l,
    })
}

/// Maps a point of a rectangular channel to `(x, edge id)`.
///
/// The spine occupies `0 ≤ z ≤ l₀(x)`; a wing sits on top of the narrower
/// adjacent spine segment between the two junction widths. Points on a branch
/// cross-section map to the spine.
pub fn identify(shape: &ChannelShape, x: f64, z: f64) -> Result<(f64, i64)> {
    if !shape.is_rectangular() {
        return Err(Error::Domain("identify needs a rectangular-mode shape".into()));
    }
    let outside = || Error::Domain(format!("point ({x}, {z}) outside the channel"));
    if z < 0.0 {
        return Err(outside());
    }
    let (side, i, local) = shape.locate(x).ok_or_else(outside)?;
    let cell = shape.cell(side, i);
    let s = side.sign() as i64;
    let spine_id = s * (2 * i as i64 + 1);
    let mut top = cell.spine_profile.width(local);
    // On a junction cross-section the wider neighbour bounds the spine.
    for (xj, c) in junction_list(shape) {
        if x == xj {
            top = top.max(c.alpha).max(c.beta);
        }
    }
    if z <= top {
        return Ok((x, spine_id));
    }
    for (k, (xj, c)) in junction_list(shape).into_iter().enumerate() {
        let (lo, hi) = (xj.min(xj + c.wing_r), xj.max(xj + c.wing_r));
        let (zl, zh) = (c.alpha.min(c.beta), c.alpha.max(c.beta));
        if x >= lo && x <= hi && z >= zl && z <= zh {
            let n = shape.positive.len();
            let (side, idx) = if k < n { (1, k) } else { (-1, k - n) };
            return Ok((x, side * 2 * (idx as i64 + 1)));
        }
    }
    Err(outside())
}

fn junction_list(shape: &ChannelShape) -> Vec<(f64, &crate::channel::Cell)> {
    let mut v: Vec<_> = shape.junctions(Side::Plus).into_iter().zip(&shape.positive).collect();
    v.extend(shape.junctions(Side::Minus).into_iter().zip(&shape.negative));
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{sample_channel, GeneratorParams};

    #[test]
    fn flat_one_cell_counts() {
        let g = build_graph(&ChannelShape::flat(1.0, 1.0, 1)).unwrap();
        let spine = g.edges.iter().filter(|e| e.kind == EdgeKind::Spine).count();
        let wing = g.edges.iter().filter(|e| e.kind == EdgeKind::Wing).count();
        assert_eq!((spine, wing), (2, 2));
        assert_eq!(g.count(VertexKind::Interior), 2);
        assert_eq!(g.count(VertexKind::Exterior), 2);
    }

    #[test]
    fn spine_order_and_ids() {
        let s = sample_channel(&GeneratorParams::default(), 4, 3).unwrap();
        let g = build_graph(&s).unwrap();
        let ids: Vec<i64> = g.spine.iter().map(|&i| g.edges[i].id).collect();
        assert_eq!(ids, vec![-5, -3, -1, 1, 3, 5]);
        let xs: Vec<f64> = g.spine.iter().map(|&i| g.edges[i].origin_x).collect();
        assert!(xs.windows(2).all(|w| w[0] < w[1]));
        assert!(g.max_junction_defect() <= 1e-14);
    }

    #[test]
    fn constant_width_measures() {
        let s = ChannelShape::flat(2.0, 1.0, 1);
        let g = build_graph(&s).unwrap();
        let m = measures(g.edge_by_id(1).unwrap(), 1.0).unwrap();
        assert!((m.p - 0.5).abs() < 1e-14 && (m.m - 4.0).abs() < 1e-14);
        assert!(measures(g.edge_by_id(1).unwrap(), 1.5).is_err());
    }

    #[test]
    fn identify_rectangular() {
        let s = sample_channel(&GeneratorParams::rectangular(), 9, 2).unwrap();
        let c = &s.positive[0];
        let xj = c.spine_length;
        assert_eq!(identify(&s, 0.3, 0.1).unwrap().1, 1);
        assert_eq!(identify(&s, xj, c.alpha.max(c.beta)).unwrap().1, 1);
        let xw = xj + 0.5 * c.wing_r;
        let zw = 0.5 * (c.alpha + c.beta);
        assert_eq!(identify(&s, xw, zw).unwrap().1, 2);
        assert!(identify(&s, 0.3, 5.0).is_err());
    }
}
