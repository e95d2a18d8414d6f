//! Skeleton topologies and the graph machinery built on them.
//!
//! A skeleton is a graph whose nodes are joints and whose edges are bones.
//! Convolution over bones needs three derived structures, all defined here:
//!
//! * an edge-to-edge distance (length in nodes of the shortest connecting
//!   path), which induces edge neighborhoods;
//! * a labeling of each neighborhood into three subsets by comparing edge
//!   distances to the body's gravity center (equal / closer / farther);
//! * one normalized adjacency operator per label, the matrices the spatial
//!   step of every convolution multiplies by.
//!
//! The same labeling rule applied to joints yields the operators for node
//! convolution.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::GraphError;
use crate::features::Mode;
use crate::tensor::Tensor;

/// Number of spatial label subsets: equal / closer / farther than the root
/// relative to the gravity center.
pub const NUM_LABELS: usize = 3;

const KINETICS18: &str = include_str!("../data/kinetics18.topo");
const NTU25: &str = include_str!("../data/ntu25.topo");

/// A validated skeleton graph. Bone order is the canonical edge index order
/// used everywhere downstream; within a bone, the stored `(p, q)` order
/// fixes the orientation-vector sign (`p` minus `q`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkeletonTopology {
    name: String,
    num_joints: usize,
    bones: Vec<(usize, usize)>,
    joint_adj: Vec<Vec<usize>>,
    /// All-pairs hop counts between joints.
    joint_hops: Vec<Vec<usize>>,
    /// Edges incident to each joint, in bone index order.
    incident: Vec<Vec<usize>>,
}

impl SkeletonTopology {
    /// Build and validate a topology from an explicit bone list.
    pub fn from_bones(
        name: impl Into<String>,
        num_joints: usize,
        bones: Vec<(usize, usize)>,
    ) -> Result<Self, GraphError> {
        let name = name.into();
        let mut seen = std::collections::BTreeSet::new();
        for &(a, b) in &bones {
            if a >= num_joints {
                return Err(GraphError::JointOutOfRange { joint: a, num_joints });
            }
            if b >= num_joints {
                return Err(GraphError::JointOutOfRange { joint: b, num_joints });
            }
            if a == b {
                return Err(GraphError::SelfLoopBone { a, b });
            }
            if !seen.insert((a.min(b), a.max(b))) {
                return Err(GraphError::DuplicateBone { a, b });
            }
        }
        let mut joint_adj = vec![Vec::new(); num_joints];
        let mut incident = vec![Vec::new(); num_joints];
        for (e, &(a, b)) in bones.iter().enumerate() {
            joint_adj[a].push(b);
            joint_adj[b].push(a);
            incident[a].push(e);
            incident[b].push(e);
        }
        // connectivity over the bone graph, every joint covered
        if num_joints == 0 || bones.is_empty() && num_joints > 1 {
            return Err(GraphError::Disconnected);
        }
        let hops0 = bfs_hops(&joint_adj, 0);
        if hops0.iter().any(|&h| h == usize::MAX) {
            return Err(GraphError::Disconnected);
        }
        let joint_hops = (0..num_joints).map(|j| bfs_hops(&joint_adj, j)).collect();
        Ok(Self { name, num_joints, bones, joint_adj, joint_hops, incident })
    }

    /// One of the built-in skeletons: `"kinetics18"` or `"ntu25"`.
    pub fn builtin(name: &str) -> Result<Self, GraphError> {
        Ok(SkeletonBundle::builtin(name)?.topology)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn num_joints(&self) -> usize {
        self.num_joints
    }

    pub fn num_edges(&self) -> usize {
        self.bones.len()
    }

    pub fn bones(&self) -> &[(usize, usize)] {
        &self.bones
    }

    /// Joints adjacent to `joint` via a bone.
    pub fn adjacent_joints(&self, joint: usize) -> &[usize] {
        &self.joint_adj[joint]
    }

    /// Bone indices incident to `joint`.
    pub fn incident_edges(&self, joint: usize) -> &[usize] {
        &self.incident[joint]
    }

    /// Hop count between two joints.
    pub fn joint_hops(&self, a: usize, b: usize) -> usize {
        self.joint_hops[a][b]
    }

    /// Distance between two edges: the minimum, over connecting paths, of
    /// the number of nodes on the path. Zero for an edge and itself; one
    /// for edges sharing a joint.
    pub fn edge_distance(&self, e1: usize, e2: usize) -> Result<usize, GraphError> {
        self.check_edge(e1)?;
        self.check_edge(e2)?;
        if e1 == e2 {
            return Ok(0);
        }
        let (a1, b1) = self.bones[e1];
        let (a2, b2) = self.bones[e2];
        let d = [(a1, a2), (a1, b2), (b1, a2), (b1, b2)]
            .iter()
            .map(|&(u, v)| self.joint_hops[u][v])
            .min()
            .unwrap();
        Ok(d + 1)
    }

    /// Edges within distance `r` of `e`, ascending by index. Always
    /// contains `e` itself.
    pub fn edge_neighborhood(&self, e: usize, r: usize) -> Result<Vec<usize>, GraphError> {
        self.check_edge(e)?;
        let mut out = Vec::new();
        for q in 0..self.bones.len() {
            if self.edge_distance(e, q)? <= r {
                out.push(q);
            }
        }
        Ok(out)
    }

    /// Node neighborhood: the joint itself plus joints one bone away.
    pub fn node_neighborhood(&self, joint: usize) -> Result<Vec<usize>, GraphError> {
        if joint >= self.num_joints {
            return Err(GraphError::JointOutOfRange { joint, num_joints: self.num_joints });
        }
        let mut out = vec![joint];
        out.extend_from_slice(&self.joint_adj[joint]);
        out.sort_unstable();
        Ok(out)
    }

    fn check_edge(&self, e: usize) -> Result<(), GraphError> {
        if e >= self.bones.len() {
            return Err(GraphError::EdgeOutOfRange { edge: e, num_edges: self.bones.len() });
        }
        Ok(())
    }
}

fn bfs_hops(adj: &[Vec<usize>], start: usize) -> Vec<usize> {
    let mut hops = vec![usize::MAX; adj.len()];
    let mut queue = std::collections::VecDeque::new();
    hops[start] = 0;
    queue.push_back(start);
    while let Some(u) = queue.pop_front() {
        for &v in &adj[u] {
            if hops[v] == usize::MAX {
                hops[v] = hops[u] + 1;
                queue.push_back(v);
            }
        }
    }
    hops
}

/// Per-joint rest coordinates, 2-D or 3-D depending on the dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct TemplatePose {
    coords: Vec<Vec<f64>>,
    dim: usize,
}

impl TemplatePose {
    pub fn new(coords: Vec<Vec<f64>>) -> Result<Self, GraphError> {
        let first = coords.first().ok_or(GraphError::EmptyPose)?;
        let dim = first.len();
        if dim != 2 && dim != 3 {
            return Err(GraphError::DimensionMismatch { got: dim, want: 2 });
        }
        for c in &coords {
            if c.len() != dim {
                return Err(GraphError::DimensionMismatch { got: c.len(), want: dim });
            }
        }
        Ok(Self { coords, dim })
    }

    pub fn num_joints(&self) -> usize {
        self.coords.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn joint(&self, j: usize) -> &[f64] {
        &self.coords[j]
    }

    pub fn joints(&self) -> &[Vec<f64>] {
        &self.coords
    }
}

/// Arithmetic mean of all joint coordinates.
pub fn gravity_center(pose: &TemplatePose) -> Vec<f64> {
    let mut acc = vec![0.0; pose.dim()];
    for c in pose.joints() {
        for (a, v) in acc.iter_mut().zip(c) {
            *a += v;
        }
    }
    let inv = 1.0 / pose.num_joints() as f64;
    acc.iter_mut().for_each(|a| *a *= inv);
    acc
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Midpoint of a bone's two joints.
fn edge_center(topo: &SkeletonTopology, pose: &TemplatePose, e: usize) -> Vec<f64> {
    let (p, q) = topo.bones()[e];
    pose.joint(p)
        .iter()
        .zip(pose.joint(q))
        .map(|(a, b)| 0.5 * (a + b))
        .collect()
}

/// Spatial-configuration labels for every (root, neighbor) pair within
/// distance <= 1. Keyed by `(root, neighbor)` slot indices; values in
/// `{0: equal, 1: closer, 2: farther}` relative to the gravity center.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelTable {
    slots: usize,
    labels: BTreeMap<(usize, usize), u8>,
}

impl LabelTable {
    pub fn num_slots(&self) -> usize {
        self.slots
    }

    pub fn get(&self, root: usize, neighbor: usize) -> Option<u8> {
        self.labels.get(&(root, neighbor)).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, u8)> + '_ {
        self.labels.iter().map(|(&(r, n), &l)| (r, n, l))
    }

    /// Members of `root`'s neighborhood, with labels.
    pub fn neighborhood(&self, root: usize) -> impl Iterator<Item = (usize, u8)> + '_ {
        self.labels
            .range((root, 0)..(root, usize::MAX))
            .map(|(&(_, n), &l)| (n, l))
    }
}

fn label_for(d_neighbor: f64, d_root: f64, tol: f64) -> u8 {
    if (d_neighbor - d_root).abs() <= tol {
        0
    } else if d_neighbor < d_root {
        1
    } else {
        2
    }
}

/// Label every edge pair within distance 1 by comparing distances of the
/// edge centers to the gravity center. The root labels itself 0.
pub fn spatial_labels(
    topo: &SkeletonTopology,
    pose: &TemplatePose,
    tol: f64,
) -> Result<LabelTable, GraphError> {
    if pose.num_joints() != topo.num_joints() {
        return Err(GraphError::JointCountMismatch {
            got: pose.num_joints(),
            want: topo.num_joints(),
        });
    }
    let gc = gravity_center(pose);
    let dist: Vec<f64> = (0..topo.num_edges())
        .map(|e| euclid(&edge_center(topo, pose, e), &gc))
        .collect();
    let mut labels = BTreeMap::new();
    for p in 0..topo.num_edges() {
        for q in topo.edge_neighborhood(p, 1)? {
            labels.insert((p, q), label_for(dist[q], dist[p], tol));
        }
    }
    Ok(LabelTable { slots: topo.num_edges(), labels })
}

/// Node analogue of [`spatial_labels`]: joints within one bone of the root,
/// labeled by joint distance to the gravity center.
pub fn node_spatial_labels(
    topo: &SkeletonTopology,
    pose: &TemplatePose,
    tol: f64,
) -> Result<LabelTable, GraphError> {
    if pose.num_joints() != topo.num_joints() {
        return Err(GraphError::JointCountMismatch {
            got: pose.num_joints(),
            want: topo.num_joints(),
        });
    }
    let gc = gravity_center(pose);
    let dist: Vec<f64> = (0..topo.num_joints()).map(|j| euclid(pose.joint(j), &gc)).collect();
    let mut labels = BTreeMap::new();
    for p in 0..topo.num_joints() {
        for q in topo.node_neighborhood(p)? {
            labels.insert((p, q), label_for(dist[q], dist[p], tol));
        }
    }
    Ok(LabelTable { slots: topo.num_joints(), labels })
}

/// The three normalized adjacency operators of a labeled neighborhood
/// structure: `ops[l][p][q] = 1 / Z_p(q)` where `Z_p(q)` counts the members
/// of `p`'s neighborhood sharing `q`'s label. Rows indexed by root slot.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelPartition {
    labels: LabelTable,
    ops: [Tensor; NUM_LABELS],
}

impl LabelPartition {
    pub fn from_labels(labels: LabelTable) -> Self {
        let s = labels.slots;
        let mut ops = [Tensor::zeros(vec![s, s]), Tensor::zeros(vec![s, s]), Tensor::zeros(vec![s, s])];
        for p in 0..s {
            let mut counts = [0usize; NUM_LABELS];
            for (_, l) in labels.neighborhood(p) {
                counts[l as usize] += 1;
            }
            for (q, l) in labels.neighborhood(p) {
                *ops[l as usize].at_mut(&[p, q]) = 1.0 / counts[l as usize] as f64;
            }
        }
        Self { labels, ops }
    }

    /// Edge partition of a skeleton under a template pose.
    pub fn edges(
        topo: &SkeletonTopology,
        pose: &TemplatePose,
        tol: f64,
    ) -> Result<Self, GraphError> {
        Ok(Self::from_labels(spatial_labels(topo, pose, tol)?))
    }

    /// Node partition of a skeleton under a template pose.
    pub fn nodes(
        topo: &SkeletonTopology,
        pose: &TemplatePose,
        tol: f64,
    ) -> Result<Self, GraphError> {
        Ok(Self::from_labels(node_spatial_labels(topo, pose, tol)?))
    }

    /// Slots (edges or nodes) the partition is over.
    pub fn num_slots(&self) -> usize {
        self.labels.slots
    }

    pub fn labels(&self) -> &LabelTable {
        &self.labels
    }

    pub fn ops(&self) -> &[Tensor; NUM_LABELS] {
        &self.ops
    }

    pub fn op(&self, label: usize) -> &Tensor {
        &self.ops[label]
    }

    /// The partition after renaming slot indices: new slot `i` is old slot
    /// `perm[i]`. Rows and columns of every operator move together.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let s = self.labels.slots;
        assert_eq!(perm.len(), s);
        let mut labels = BTreeMap::new();
        let mut inv = vec![0usize; s];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        for (r, n, l) in self.labels.iter() {
            labels.insert((inv[r], inv[n]), l);
        }
        let mut ops = [
            Tensor::zeros(vec![s, s]),
            Tensor::zeros(vec![s, s]),
            Tensor::zeros(vec![s, s]),
        ];
        for l in 0..NUM_LABELS {
            for i in 0..s {
                for j in 0..s {
                    *ops[l].at_mut(&[i, j]) = self.ops[l].at(&[perm[i], perm[j]]);
                }
            }
        }
        Self { labels: LabelTable { slots: s, labels }, ops }
    }
}

/// Three normalized E-by-E adjacency operators for an edge label table,
/// validated for completeness against the topology.
pub fn partition_adjacency(
    topo: &SkeletonTopology,
    labels: &LabelTable,
) -> Result<[Tensor; NUM_LABELS], GraphError> {
    for p in 0..topo.num_edges() {
        for q in topo.edge_neighborhood(p, 1)? {
            if labels.get(p, q).is_none() {
                return Err(GraphError::MissingLabel { root: p, neighbor: q });
            }
        }
    }
    Ok(LabelPartition::from_labels(labels.clone()).ops)
}

/// A topology together with its rest-pose template and dataset mode, as
/// stored in a `.topo` file.
#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonBundle {
    pub topology: SkeletonTopology,
    pub template: TemplatePose,
    pub mode: Mode,
}

impl SkeletonBundle {
    /// One of the built-in bundles: `"kinetics18"` or `"ntu25"`.
    pub fn builtin(name: &str) -> Result<Self, GraphError> {
        match name {
            "kinetics18" => Self::parse(KINETICS18),
            "ntu25" => Self::parse(NTU25),
            other => Err(GraphError::UnknownName(other.to_string())),
        }
    }

    /// Resolve a CLI-style topology spec: a built-in name or a file path.
    pub fn resolve(spec: &str) -> Result<Self, GraphError> {
        match Self::builtin(spec) {
            Ok(b) => Ok(b),
            Err(GraphError::UnknownName(_)) if Path::new(spec).exists() => Self::load(spec),
            Err(e) => Err(e),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, GraphError> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), GraphError> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    /// Parse the structured-text bundle format.
    pub fn parse(text: &str) -> Result<Self, GraphError> {
        let mut name = None;
        let mut mode = None;
        let mut joints = None;
        let mut bone_count = None;
        let mut version = None;
        let mut format = None;
        let mut bones = Vec::new();
        let mut template: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |what: &str| GraphError::BadFile(format!("line {}: {what}", lineno + 1));
            let mut parts = line.split_whitespace();
            let key = parts.next().unwrap();
            let rest: Vec<&str> = parts.collect();
            match key {
                "format" => format = Some(rest.join(" ")),
                "version" => {
                    version = Some(
                        rest.first()
                            .and_then(|v| v.parse::<u32>().ok())
                            .ok_or_else(|| bad("unreadable version"))?,
                    )
                }
                "name" => name = Some(rest.join(" ")),
                "mode" => {
                    mode = Some(match rest.first().copied() {
                        Some("kinetics2d") => Mode::Kinetics2d,
                        Some("ntu3d") => Mode::Ntu3d,
                        other => {
                            return Err(bad(&format!("unknown mode {other:?}")));
                        }
                    })
                }
                "joints" => {
                    joints = Some(
                        rest.first()
                            .and_then(|v| v.parse::<usize>().ok())
                            .ok_or_else(|| bad("unreadable joint count"))?,
                    )
                }
                "bones" => {
                    bone_count = Some(
                        rest.first()
                            .and_then(|v| v.parse::<usize>().ok())
                            .ok_or_else(|| bad("unreadable bone count"))?,
                    )
                }
                "bone" => {
                    if rest.len() != 2 {
                        return Err(bad("bone wants two joint indices"));
                    }
                    let a = rest[0].parse().map_err(|_| bad("unreadable joint index"))?;
                    let b = rest[1].parse().map_err(|_| bad("unreadable joint index"))?;
                    bones.push((a, b));
                }
                "template" => {
                    if rest.len() < 3 || rest.len() > 4 {
                        return Err(bad("template wants a joint index and 2 or 3 coords"));
                    }
                    let j: usize = rest[0].parse().map_err(|_| bad("unreadable joint index"))?;
                    let coords: Result<Vec<f64>, _> =
                        rest[1..].iter().map(|v| v.parse::<f64>()).collect();
                    template.insert(j, coords.map_err(|_| bad("unreadable coordinate"))?);
                }
                other => return Err(bad(&format!("unknown key '{other}'"))),
            }
        }
        if format.as_deref() != Some("skeleton-topology") {
            return Err(GraphError::BadFile("missing 'format skeleton-topology' line".into()));
        }
        match version {
            Some(1) => {}
            Some(v) => {
                return Err(GraphError::BadFile(format!("unsupported version {v} (want 1)")));
            }
            None => return Err(GraphError::BadFile("missing version".into())),
        }
        let name = name.ok_or_else(|| GraphError::BadFile("missing name".into()))?;
        let mode = mode.ok_or_else(|| GraphError::BadFile("missing mode".into()))?;
        let num_joints = joints.ok_or_else(|| GraphError::BadFile("missing joint count".into()))?;
        if bone_count != Some(bones.len()) {
            return Err(GraphError::BadFile(format!(
                "bone count {:?} disagrees with {} bone lines",
                bone_count,
                bones.len()
            )));
        }
        if template.len() != num_joints || !template.keys().copied().eq(0..num_joints) {
            return Err(GraphError::BadFile(format!(
                "template must cover joints 0..{num_joints} exactly"
            )));
        }
        let topology = SkeletonTopology::from_bones(name, num_joints, bones)?;
        let pose = TemplatePose::new(template.into_values().collect())?;
        if pose.dim() != mode.coord_dim() {
            return Err(GraphError::DimensionMismatch {
                got: pose.dim(),
                want: mode.coord_dim(),
            });
        }
        Ok(Self { topology, template: pose, mode })
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "format skeleton-topology");
        let _ = writeln!(s, "version 1");
        let _ = writeln!(s, "name {}", self.topology.name());
        let _ = writeln!(
            s,
            "mode {}",
            match self.mode {
                Mode::Kinetics2d => "kinetics2d",
                Mode::Ntu3d => "ntu3d",
            }
        );
        let _ = writeln!(s, "joints {}", self.topology.num_joints());
        let _ = writeln!(s, "bones {}", self.topology.num_edges());
        for &(a, b) in self.topology.bones() {
            let _ = writeln!(s, "bone {a} {b}");
        }
        for (j, c) in self.template.joints().iter().enumerate() {
            let coords: Vec<String> = c.iter().map(|v| format!("{v}")).collect();
            let _ = writeln!(s, "template {j} {}", coords.join(" "));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path4() -> SkeletonTopology {
        // a - b - c - d
        SkeletonTopology::from_bones("path4", 4, vec![(0, 1), (1, 2), (2, 3)]).unwrap()
    }

    #[test]
    fn builtin_shapes() {
        let k = SkeletonTopology::builtin("kinetics18").unwrap();
        assert_eq!(k.num_joints(), 18);
        assert_eq!(k.num_edges(), 17);
        let n = SkeletonTopology::builtin("ntu25").unwrap();
        assert_eq!(n.num_joints(), 25);
        assert_eq!(n.num_edges(), 24);
    }

    #[test]
    fn builtin_unknown_name() {
        assert!(matches!(
            SkeletonTopology::builtin("smpl24"),
            Err(GraphError::UnknownName(_))
        ));
    }

    #[test]
    fn minimal_single_bone_topology() {
        let t = SkeletonTopology::from_bones("pair", 2, vec![(0, 1)]).unwrap();
        assert_eq!(t.num_edges(), 1);
        assert_eq!(t.edge_distance(0, 0).unwrap(), 0);
    }

    #[test]
    fn validation_errors() {
        assert!(matches!(
            SkeletonTopology::from_bones("t", 2, vec![(0, 1), (1, 0)]),
            Err(GraphError::DuplicateBone { .. })
        ));
        assert!(matches!(
            SkeletonTopology::from_bones("t", 2, vec![(0, 2)]),
            Err(GraphError::JointOutOfRange { .. })
        ));
        assert!(matches!(
            SkeletonTopology::from_bones("t", 2, vec![(1, 1)]),
            Err(GraphError::SelfLoopBone { .. })
        ));
        // two disjoint bones
        assert!(matches!(
            SkeletonTopology::from_bones("t", 4, vec![(0, 1), (2, 3)]),
            Err(GraphError::Disconnected)
        ));
        // an uncovered joint
        assert!(matches!(
            SkeletonTopology::from_bones("t", 3, vec![(0, 1)]),
            Err(GraphError::Disconnected)
        ));
    }

    #[test]
    fn edge_distance_basics() {
        let t = path4();
        assert_eq!(t.edge_distance(1, 1).unwrap(), 0);
        assert_eq!(t.edge_distance(0, 1).unwrap(), 1); // share joint b
        assert_eq!(t.edge_distance(0, 2).unwrap(), 2);
        assert!(t.edge_distance(0, 9).is_err());
    }

    #[test]
    fn edge_distance_branching_figure() {
        // Nodes a..g = 0..7; two routes between e_ae and e_dg: through the
        // a-b-c-d chain (4 nodes) and through the e-f-g chain (3 nodes).
        let t = SkeletonTopology::from_bones(
            "fig",
            7,
            vec![(0, 4), (0, 1), (1, 2), (2, 3), (3, 6), (4, 5), (5, 6)],
        )
        .unwrap();
        let e_ae = 0;
        let e_dg = 4;
        assert_eq!(t.edge_distance(e_ae, e_dg).unwrap(), 3);
    }

    #[test]
    fn neighborhood_path_graph() {
        let t = path4();
        assert_eq!(t.edge_neighborhood(1, 1).unwrap(), vec![0, 1, 2]);
        assert_eq!(t.edge_neighborhood(1, 0).unwrap(), vec![1]);
        assert_eq!(t.edge_neighborhood(0, 2).unwrap(), vec![0, 1, 2]);
    }

    /// Oracle: breadth-first search over the explicitly materialized line
    /// graph, fully independent of the endpoint-hop implementation.
    fn line_graph_distances(t: &SkeletonTopology, start: usize) -> Vec<usize> {
        let e = t.num_edges();
        let mut adj = vec![Vec::new(); e];
        for i in 0..e {
            for j in 0..e {
                if i != j {
                    let (a1, b1) = t.bones()[i];
                    let (a2, b2) = t.bones()[j];
                    if a1 == a2 || a1 == b2 || b1 == a2 || b1 == b2 {
                        adj[i].push(j);
                    }
                }
            }
        }
        bfs_hops(&adj, start)
    }

    #[test]
    fn neighborhoods_match_line_graph_bfs_on_kinetics() {
        let t = SkeletonTopology::builtin("kinetics18").unwrap();
        for e in 0..t.num_edges() {
            let oracle = line_graph_distances(&t, e);
            for r in 0..=2 {
                let want: Vec<usize> =
                    (0..t.num_edges()).filter(|&q| oracle[q] <= r).collect();
                assert_eq!(t.edge_neighborhood(e, r).unwrap(), want, "edge {e} r {r}");
            }
        }
    }

    #[test]
    fn edge_distance_is_a_metric_on_both_builtins() {
        for name in ["kinetics18", "ntu25"] {
            let t = SkeletonTopology::builtin(name).unwrap();
            let e = t.num_edges();
            let d = |i: usize, j: usize| t.edge_distance(i, j).unwrap();
            for i in 0..e {
                for j in 0..e {
                    assert_eq!(d(i, j) == 0, i == j);
                    assert_eq!(d(i, j), d(j, i));
                    for k in 0..e {
                        assert!(d(i, k) <= d(i, j) + d(j, k), "{name} {i} {j} {k}");
                    }
                }
            }
        }
    }

    #[test]
    fn gravity_center_examples() {
        let pose = TemplatePose::new(vec![vec![0., 0.], vec![2., 2.]]).unwrap();
        assert_eq!(gravity_center(&pose), vec![1., 1.]);
        let same = TemplatePose::new(vec![vec![3., -1., 2.]; 5]).unwrap();
        assert_eq!(gravity_center(&same), vec![3., -1., 2.]);
    }

    #[test]
    fn gravity_center_of_ntu_template_matches_plain_summation() {
        let b = SkeletonBundle::builtin("ntu25").unwrap();
        let gc = gravity_center(&b.template);
        for d in 0..3 {
            let mut sum = 0.0;
            for j in 0..25 {
                sum += b.template.joint(j)[d];
            }
            assert!((gc[d] - sum / 25.0).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_pose_is_rejected() {
        assert!(matches!(TemplatePose::new(vec![]), Err(GraphError::EmptyPose)));
    }

    #[test]
    fn root_labels_itself_equal() {
        let b = SkeletonBundle::builtin("kinetics18").unwrap();
        let labels = spatial_labels(&b.topology, &b.template, 1e-6).unwrap();
        for p in 0..b.topology.num_edges() {
            assert_eq!(labels.get(p, p), Some(0));
        }
    }

    #[test]
    fn symmetric_star_labels_all_equal() {
        // three bones from a hub, tips equidistant from the center of mass
        let t = SkeletonTopology::from_bones("star", 4, vec![(0, 1), (0, 2), (0, 3)]).unwrap();
        let r = 1.0;
        let pose = TemplatePose::new(vec![
            vec![0.0, 0.0],
            vec![r, 0.0],
            vec![-0.5, 0.866025403784439],
            vec![-0.5, -0.866025403784439],
        ])
        .unwrap();
        let labels = spatial_labels(&t, &pose, 1e-9).unwrap();
        for (_, _, l) in labels.iter() {
            assert_eq!(l, 0);
        }
    }

    #[test]
    fn labels_match_scalar_comparison_on_kinetics() {
        let b = SkeletonBundle::builtin("kinetics18").unwrap();
        let (t, pose) = (&b.topology, &b.template);
        let tol = 1e-6;
        let labels = spatial_labels(t, pose, tol).unwrap();
        let gc = gravity_center(pose);
        // independent per-pair comparison, no shared distance cache
        let center_dist = |e: usize| {
            let (p, q) = t.bones()[e];
            let c: Vec<f64> = (0..2).map(|d| (pose.joint(p)[d] + pose.joint(q)[d]) / 2.0).collect();
            ((c[0] - gc[0]).powi(2) + (c[1] - gc[1]).powi(2)).sqrt()
        };
        let mut checked = 0;
        for p in 0..t.num_edges() {
            for q in 0..t.num_edges() {
                let Some(l) = labels.get(p, q) else { continue };
                assert!(t.edge_distance(p, q).unwrap() <= 1);
                let (dp, dq) = (center_dist(p), center_dist(q));
                let want = if (dq - dp).abs() <= tol {
                    0
                } else if dq < dp {
                    1
                } else {
                    2
                };
                assert_eq!(l, want, "pair ({p}, {q})");
                checked += 1;
            }
        }
        assert!(checked > 17);
    }

    #[test]
    fn labels_cover_exactly_the_radius_one_pairs() {
        let b = SkeletonBundle::builtin("ntu25").unwrap();
        let labels = spatial_labels(&b.topology, &b.template, 1e-6).unwrap();
        for p in 0..b.topology.num_edges() {
            for q in 0..b.topology.num_edges() {
                let within = b.topology.edge_distance(p, q).unwrap() <= 1;
                assert_eq!(labels.get(p, q).is_some(), within);
            }
        }
    }

    #[test]
    fn partition_rows_sum_to_one_per_present_label() {
        for name in ["kinetics18", "ntu25"] {
            let b = SkeletonBundle::builtin(name).unwrap();
            let part = LabelPartition::edges(&b.topology, &b.template, 1e-6).unwrap();
            let e = b.topology.num_edges();
            for p in 0..e {
                let present: Vec<usize> = (0..NUM_LABELS)
                    .filter(|&l| part.labels().neighborhood(p).any(|(_, lab)| lab as usize == l))
                    .collect();
                for l in 0..NUM_LABELS {
                    let row: f64 = (0..e).map(|q| part.op(l).at(&[p, q])).sum();
                    let want = if present.contains(&l) { 1.0 } else { 0.0 };
                    assert!((row - want).abs() < 1e-9, "{name} root {p} label {l}");
                }
            }
        }
    }

    #[test]
    fn partition_entries_imply_label_and_adjacency() {
        let b = SkeletonBundle::builtin("kinetics18").unwrap();
        let part = LabelPartition::edges(&b.topology, &b.template, 1e-6).unwrap();
        let e = b.topology.num_edges();
        for l in 0..NUM_LABELS {
            for p in 0..e {
                for q in 0..e {
                    let v = part.op(l).at(&[p, q]);
                    if v != 0.0 {
                        assert_eq!(part.labels().get(p, q), Some(l as u8));
                        assert!(b.topology.edge_distance(p, q).unwrap() <= 1);
                    }
                }
            }
        }
    }

    #[test]
    fn partition_matches_term_by_term_construction() {
        let b = SkeletonBundle::builtin("kinetics18").unwrap();
        let (t, pose) = (&b.topology, &b.template);
        let labels = spatial_labels(t, pose, 1e-6).unwrap();
        let ops = partition_adjacency(t, &labels).unwrap();
        // direct construction, one neighborhood at a time
        let e = t.num_edges();
        for p in 0..e {
            let hood = t.edge_neighborhood(p, 1).unwrap();
            for &q in &hood {
                let lq = labels.get(p, q).unwrap();
                let z = hood.iter().filter(|&&m| labels.get(p, m) == Some(lq)).count();
                let want = 1.0 / z as f64;
                assert!((ops[lq as usize].at(&[p, q]) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn partition_trivial_cases() {
        // hub with three spokes; tips pulled to one side so all three
        // non-root neighbors of edge 0 land in the same subset
        let t = SkeletonTopology::from_bones("hub", 4, vec![(0, 1), (0, 2), (0, 3)]).unwrap();
        let pose = TemplatePose::new(vec![
            vec![0.0, 0.0],
            vec![4.0, 0.0],
            vec![5.0, 1.0],
            vec![5.0, -1.0],
        ])
        .unwrap();
        let part = LabelPartition::edges(&t, &pose, 1e-9).unwrap();
        let l1 = part.labels().get(0, 1).unwrap();
        let l2 = part.labels().get(0, 2).unwrap();
        assert_eq!(l1, l2);
        assert!((part.op(l1 as usize).at(&[0, 1]) - 1.0 / 3.0).abs() < 1e-12);
        // a root whose own label subset is a singleton keeps weight 1
        assert_eq!(part.labels().get(0, 0), Some(0));
        assert!((part.op(0).at(&[0, 0]) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn missing_label_detected() {
        let t = path4();
        let labels = LabelTable { slots: 3, labels: BTreeMap::new() };
        assert!(matches!(
            partition_adjacency(&t, &labels),
            Err(GraphError::MissingLabel { .. })
        ));
    }

    #[test]
    fn single_bone_partition_is_identity_on_label_zero() {
        let t = SkeletonTopology::from_bones("pair", 2, vec![(0, 1)]).unwrap();
        let pose = TemplatePose::new(vec![vec![0., 0.], vec![1., 0.]]).unwrap();
        let part = LabelPartition::edges(&t, &pose, 1e-6).unwrap();
        assert_eq!(part.op(0).at(&[0, 0]), 1.0);
        assert_eq!(part.op(1).at(&[0, 0]), 0.0);
        assert_eq!(part.op(2).at(&[0, 0]), 0.0);
    }

    #[test]
    fn bundle_round_trips_through_text() {
        let b = SkeletonBundle::builtin("ntu25").unwrap();
        let again = SkeletonBundle::parse(&b.to_text()).unwrap();
        assert_eq!(b, again);
    }

    #[test]
    fn bundle_parse_rejects_bad_input() {
        assert!(SkeletonBundle::parse("format skeleton-topology\nversion 2\n").is_err());
        assert!(SkeletonBundle::parse("version 1\n").is_err());
        let no_template = "format skeleton-topology\nversion 1\nname x\nmode kinetics2d\n\
                           joints 2\nbones 1\nbone 0 1\n";
        assert!(SkeletonBundle::parse(no_template).is_err());
    }

    #[test]
    fn node_labels_cover_self_and_adjacent() {
        let b = SkeletonBundle::builtin("ntu25").unwrap();
        let labels = node_spatial_labels(&b.topology, &b.template, 1e-6).unwrap();
        for j in 0..25 {
            assert_eq!(labels.get(j, j), Some(0));
            for &n in b.topology.adjacent_joints(j) {
                assert!(labels.get(j, n).is_some());
            }
        }
    }
}
