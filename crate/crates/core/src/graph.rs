//! Labeled graphs, TU-format ingestion, featurization and fold splitting.

use crate::error::{Error, Result};
use crate::tensor::Matrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

/// Undirected graph with optional node labels and a class label.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledGraph {
    adjacency: Vec<Vec<bool>>,
    node_labels: Option<Vec<usize>>,
    class_label: usize,
}

impl LabeledGraph {
    /// Builds a graph from an undirected edge list; edges are symmetrized and
    /// self-loops dropped.
    pub fn from_edges(
        node_count: usize,
        edges: &[(usize, usize)],
        node_labels: Option<Vec<usize>>,
        class_label: usize,
    ) -> Result<Self> {
        if node_count == 0 {
            return Err(Error::Config("graph must have at least one node".into()));
        }
        if let Some(l) = &node_labels {
            if l.len() != node_count {
                return Err(Error::Config(format!("{} node labels for {} nodes", l.len(), node_count)));
            }
        }
        let mut adjacency = vec![vec![false; node_count]; node_count];
        for &(u, v) in edges {
            if u >= node_count || v >= node_count {
                return Err(Error::Config(format!("edge ({u},{v}) outside {node_count} nodes")));
            }
            if u != v {
                adjacency[u][v] = true;
                adjacency[v][u] = true;
            }
        }
        Ok(Self { adjacency, node_labels, class_label })
    }

    pub fn node_count(&self) -> usize {
        self.adjacency.len()
    }

    pub fn adjacency(&self) -> &[Vec<bool>] {
        &self.adjacency
    }

    pub fn node_labels(&self) -> Option<&[usize]> {
        self.node_labels.as_deref()
    }

    pub fn class_label(&self) -> usize {
        self.class_label
    }

    pub fn degree(&self, u: usize) -> usize {
        self.adjacency[u].iter().filter(|&&e| e).count()
    }

    pub fn max_degree(&self) -> usize {
        (0..self.node_count()).map(|u| self.degree(u)).max().unwrap_or(0)
    }

    pub fn edge_count(&self) -> usize {
        (0..self.node_count()).map(|u| self.degree(u)).sum::<usize>() / 2
    }

    /// Undirected edges with `u < v`.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let n = self.node_count();
        let mut out = Vec::new();
        for u in 0..n {
            for v in u + 1..n {
                if self.adjacency[u][v] {
                    out.push((u, v));
                }
            }
        }
        out
    }

    /// Adjacency as a 0/1 matrix.
    pub fn adjacency_matrix(&self) -> Matrix {
        let n = self.node_count();
        let mut m = Matrix::zeros(n, n);
        for u in 0..n {
            for v in 0..n {
                if self.adjacency[u][v] {
                    m[(u, v)] = 1.0;
                }
            }
        }
        m
    }

    /// Relabels nodes so that new node `i` is old node `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let n = self.node_count();
        let adjacency = (0..n).map(|i| (0..n).map(|j| self.adjacency[perm[i]][perm[j]]).collect()).collect();
        let node_labels = self.node_labels.as_ref().map(|l| perm.iter().map(|&p| l[p]).collect());
        Self { adjacency, node_labels, class_label: self.class_label }
    }
}

/// A loaded dataset with contiguous class and node-label ids.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetBundle {
    pub name: String,
    pub graphs: Vec<LabeledGraph>,
    pub num_classes: usize,
    /// Zero for datasets without node labels.
    pub num_node_labels: usize,
}

impl DatasetBundle {
    pub fn labels(&self) -> Vec<usize> {
        self.graphs.iter().map(|g| g.class_label()).collect()
    }

    pub fn max_node_count(&self) -> usize {
        self.graphs.iter().map(LabeledGraph::node_count).max().unwrap_or(0)
    }

    pub fn subset(&self, indices: &[usize]) -> Vec<&LabeledGraph> {
        indices.iter().map(|&i| &self.graphs[i]).collect()
    }

    /// Writes the bundle in TU layout: `NAME_A.txt`, `NAME_graph_indicator.txt`,
    /// `NAME_graph_labels.txt` and, when labeled, `NAME_node_labels.txt`.
    /// Ids are written as stored (already contiguous).
    pub fn write_tu(&self, directory: &Path) -> Result<()> {
        fs::create_dir_all(directory).map_err(|e| Error::io(directory, e))?;
        let mut a = String::new();
        let mut indicator = String::new();
        let mut graph_labels = String::new();
        let mut node_labels = String::new();
        let mut offset = 1;
        for (gi, g) in self.graphs.iter().enumerate() {
            for u in 0..g.node_count() {
                indicator.push_str(&format!("{}\n", gi + 1));
                for v in 0..g.node_count() {
                    if g.adjacency[u][v] {
                        a.push_str(&format!("{}, {}\n", u + offset, v + offset));
                    }
                }
                if let Some(l) = g.node_labels() {
                    node_labels.push_str(&format!("{}\n", l[u]));
                }
            }
            graph_labels.push_str(&format!("{}\n", g.class_label()));
            offset += g.node_count();
        }
        let write = |suffix: &str, body: &str| -> Result<()> {
            let path = directory.join(format!("{}_{}.txt", self.name, suffix));
            let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
            f.write_all(body.as_bytes()).map_err(|e| Error::io(&path, e))
        };
        write("A", &a)?;
        write("graph_indicator", &indicator)?;
        write("graph_labels", &graph_labels)?;
        if self.num_node_labels > 0 {
            write("node_labels", &node_labels)?;
        }
        Ok(())
    }
}

fn read_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        msg: format!("cannot read mandatory file: {e}"),
    })?;
    Ok(text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim().to_string()))
        .filter(|(_, l)| !l.is_empty())
        .collect())
}

fn parse_int(path: &Path, line: usize, token: &str) -> Result<i64> {
    token.trim().parse::<i64>().map_err(|_| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: format!("expected integer, found {token:?}"),
    })
}

fn parse_column(path: &Path) -> Result<Vec<i64>> {
    read_lines(path)?.iter().map(|(line, text)| parse_int(path, *line, text)).collect()
}

/// Maps arbitrary integer labels onto `0..k` preserving numeric order.
fn remap(values: &[i64]) -> (Vec<usize>, usize) {
    let distinct: BTreeSet<i64> = values.iter().copied().collect();
    let index: BTreeMap<i64, usize> = distinct.iter().enumerate().map(|(i, &v)| (v, i)).collect();
    (values.iter().map(|v| index[v]).collect(), distinct.len())
}

/// Loads `NAME_*.txt` files from `directory`.
pub fn load_tu_dataset(directory: &Path, name: &str) -> Result<DatasetBundle> {
    let file = |suffix: &str| -> PathBuf { directory.join(format!("{name}_{suffix}.txt")) };
    let indicator_path = file("graph_indicator");
    let indicator = parse_column(&indicator_path)?;
    let graph_label_path = file("graph_labels");
    let raw_graph_labels = parse_column(&graph_label_path)?;
    let num_graphs = raw_graph_labels.len();
    if num_graphs == 0 {
        return Err(Error::Format { path: graph_label_path, msg: "no graphs".into() });
    }

    // global node id (0-based) -> (graph, local id)
    let mut node_graph = Vec::with_capacity(indicator.len());
    let mut counts = vec![0usize; num_graphs];
    for (i, &g) in indicator.iter().enumerate() {
        if g < 1 || g as usize > num_graphs {
            return Err(Error::Format {
                path: indicator_path.clone(),
                msg: format!("node {} assigned to graph {g}, but only {num_graphs} graphs exist", i + 1),
            });
        }
        let g = g as usize - 1;
        node_graph.push((g, counts[g]));
        counts[g] += 1;
    }
    if node_graph.windows(2).any(|w| w[1].0 < w[0].0) {
        return Err(Error::Format { path: indicator_path, msg: "graph ids must be non-decreasing".into() });
    }
    if let Some(empty) = counts.iter().position(|&c| c == 0) {
        return Err(Error::Format { path: indicator_path, msg: format!("graph {} has no nodes", empty + 1) });
    }

    let labels_path = file("node_labels");
    let node_labels = if labels_path.exists() {
        let raw = parse_column(&labels_path)?;
        if raw.len() != indicator.len() {
            return Err(Error::Format {
                path: labels_path,
                msg: format!("{} node labels for {} nodes", raw.len(), indicator.len()),
            });
        }
        Some(remap(&raw))
    } else {
        None
    };

    let edges_path = file("A");
    let mut edges: Vec<Vec<(usize, usize)>> = vec![Vec::new(); num_graphs];
    for (line, text) in read_lines(&edges_path)? {
        let mut parts = text.split(',');
        let (Some(a), Some(b), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(Error::Parse { path: edges_path, line, msg: format!("expected `u, v`, found {text:?}") });
        };
        let (a, b) = (parse_int(&edges_path, line, a)?, parse_int(&edges_path, line, b)?);
        let lookup = |x: i64| -> Result<(usize, usize)> {
            if x < 1 || x as usize > node_graph.len() {
                return Err(Error::Format {
                    path: edges_path.clone(),
                    msg: format!("line {line}: node {x} is not in any graph"),
                });
            }
            Ok(node_graph[x as usize - 1])
        };
        let ((ga, la), (gb, lb)) = (lookup(a)?, lookup(b)?);
        if ga != gb {
            return Err(Error::Format { path: edges_path, msg: format!("line {line}: edge joins graphs {ga} and {gb}") });
        }
        edges[ga].push((la, lb));
    }

    let (class_labels, num_classes) = remap(&raw_graph_labels);
    let mut graphs = Vec::with_capacity(num_graphs);
    let mut cursor = 0;
    for g in 0..num_graphs {
        let labels = node_labels.as_ref().map(|(l, _)| l[cursor..cursor + counts[g]].to_vec());
        cursor += counts[g];
        graphs.push(LabeledGraph::from_edges(counts[g], &edges[g], labels, class_labels[g])?);
    }
    Ok(DatasetBundle {
        name: name.to_string(),
        graphs,
        num_classes,
        num_node_labels: node_labels.map_or(0, |(_, k)| k),
    })
}

/// Node featurization scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureScheme {
    NodeLabelOneHot,
    DegreeOneHot,
}

impl std::str::FromStr for FeatureScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "node-label-onehot" => Ok(Self::NodeLabelOneHot),
            "degree-onehot" => Ok(Self::DegreeOneHot),
            other => Err(Error::Config(format!("unknown feature scheme {other:?}"))),
        }
    }
}

impl std::fmt::Display for FeatureScheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::NodeLabelOneHot => "node-label-onehot",
            Self::DegreeOneHot => "degree-onehot",
        })
    }
}

/// One-hot node features, one row per node.
///
/// Degree features clamp degrees above `dim - 1` into the last bin.
pub fn featurize(graph: &LabeledGraph, scheme: FeatureScheme, dim: usize) -> Result<Matrix> {
    if dim == 0 {
        return Err(Error::Scheme("feature dimension must be positive".into()));
    }
    let n = graph.node_count();
    let mut x = Matrix::zeros(n, dim);
    match scheme {
        FeatureScheme::NodeLabelOneHot => {
            let labels = graph
                .node_labels()
                .ok_or_else(|| Error::Scheme("node-label-onehot requires node labels".into()))?;
            for (u, &l) in labels.iter().enumerate() {
                if l >= dim {
                    return Err(Error::Scheme(format!("node label {l} does not fit in dimension {dim}")));
                }
                x[(u, l)] = 1.0;
            }
        }
        FeatureScheme::DegreeOneHot => {
            for u in 0..n {
                x[(u, graph.degree(u).min(dim - 1))] = 1.0;
            }
        }
    }
    Ok(x)
}

/// `D^{-1/2} (A + I) D^{-1/2}` with degrees taken from `A + I`.
pub fn normalize_adjacency(adjacency: &Matrix) -> Matrix {
    let n = adjacency.rows();
    let mut a = adjacency.clone();
    for i in 0..n {
        a[(i, i)] += 1.0;
    }
    let inv_sqrt: Vec<f64> = (0..n).map(|i| 1.0 / a.row(i).iter().sum::<f64>().sqrt()).collect();
    for i in 0..n {
        for j in 0..n {
            a[(i, j)] *= inv_sqrt[i] * inv_sqrt[j];
        }
    }
    a
}

/// Splits `0..labels.len()` into `k` stratified folds.
///
/// Each class is shuffled with a seeded RNG and dealt round-robin; the
/// starting fold rotates across classes so fold sizes differ by at most one.
pub fn stratified_folds(labels: &[usize], k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(Error::Config(format!("need at least 2 folds, got {k}")));
    }
    if k > labels.len() {
        return Err(Error::Config(format!("{k} folds requested for {} samples", labels.len())));
    }
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        by_class.entry(l).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = vec![Vec::new(); k];
    let mut next = 0;
    for members in by_class.values_mut() {
        members.shuffle(&mut rng);
        for &i in members.iter() {
            folds[next].push(i);
            next = (next + 1) % k;
        }
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_files(dir: &Path, name: &str, files: &[(&str, &str)]) {
        for (suffix, body) in files {
            fs::write(dir.join(format!("{name}_{suffix}.txt")), body).unwrap();
        }
    }

    #[test]
    fn single_edge_graph() {
        let dir = tempfile::tempdir().unwrap();
        write_files(dir.path(), "T", &[("A", "1, 2\n"), ("graph_indicator", "1\n1\n"), ("graph_labels", "0\n")]);
        let b = load_tu_dataset(dir.path(), "T").unwrap();
        assert_eq!(b.graphs.len(), 1);
        assert_eq!(b.num_node_labels, 0);
        assert_eq!(b.graphs[0].adjacency_matrix().to_rows(), vec![vec![0.0, 1.0], vec![1.0, 0.0]]);
    }

    #[test]
    fn labels_are_remapped_and_edges_symmetrized() {
        let dir = tempfile::tempdir().unwrap();
        write_files(
            dir.path(),
            "T",
            &[
                ("A", "1,2\n3,4\n4,3\n"),
                ("graph_indicator", "1\n1\n2\n2\n"),
                ("graph_labels", "-1\n1\n"),
                ("node_labels", "5\n7\n7\n9\n"),
            ],
        );
        let b = load_tu_dataset(dir.path(), "T").unwrap();
        assert_eq!(b.labels(), vec![0, 1]);
        assert_eq!(b.num_classes, 2);
        assert_eq!(b.num_node_labels, 3);
        assert_eq!(b.graphs[0].node_labels(), Some(&[0, 1][..]));
        assert_eq!(b.graphs[1].node_labels(), Some(&[1, 2][..]));
        assert!(b.graphs[0].adjacency()[1][0]);
        assert_eq!(b.graphs[1].edge_count(), 1);
    }

    #[test]
    fn missing_file_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        write_files(dir.path(), "T", &[("A", "1, 2\n"), ("graph_indicator", "1\n1\n")]);
        assert!(matches!(load_tu_dataset(dir.path(), "T"), Err(Error::Format { .. })));
    }

    #[test]
    fn orphan_node_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        write_files(dir.path(), "T", &[("A", "1, 3\n"), ("graph_indicator", "1\n1\n"), ("graph_labels", "0\n")]);
        assert!(matches!(load_tu_dataset(dir.path(), "T"), Err(Error::Format { .. })));
        write_files(dir.path(), "U", &[("A", "1, 2\n"), ("graph_indicator", "1\n3\n"), ("graph_labels", "0\n")]);
        assert!(matches!(load_tu_dataset(dir.path(), "U"), Err(Error::Format { .. })));
    }

    #[test]
    fn bad_token_is_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        write_files(dir.path(), "T", &[("A", "1, x\n"), ("graph_indicator", "1\n1\n"), ("graph_labels", "0\n")]);
        match load_tu_dataset(dir.path(), "T") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn round_trip_through_tu_files() {
        let g0 = LabeledGraph::from_edges(3, &[(0, 1), (1, 2)], Some(vec![0, 1, 0]), 1).unwrap();
        let g1 = LabeledGraph::from_edges(2, &[], Some(vec![1, 1]), 0).unwrap();
        let bundle = DatasetBundle { name: "RT".into(), graphs: vec![g0, g1], num_classes: 2, num_node_labels: 2 };
        let dir = tempfile::tempdir().unwrap();
        bundle.write_tu(dir.path()).unwrap();
        assert_eq!(load_tu_dataset(dir.path(), "RT").unwrap(), bundle);
    }

    #[test]
    fn degree_features() {
        let path = LabeledGraph::from_edges(3, &[(0, 1), (1, 2)], None, 0).unwrap();
        let x = featurize(&path, FeatureScheme::DegreeOneHot, 4).unwrap();
        let hot: Vec<usize> = (0..3).map(|u| x.row(u).iter().position(|&v| v == 1.0).unwrap()).collect();
        assert_eq!(hot, vec![1, 2, 1]);
        let single = LabeledGraph::from_edges(1, &[], None, 0).unwrap();
        assert_eq!(featurize(&single, FeatureScheme::DegreeOneHot, 2).unwrap().to_rows(), vec![vec![1.0, 0.0]]);
        let clamped = featurize(&path, FeatureScheme::DegreeOneHot, 2).unwrap();
        assert_eq!(clamped.row(1), &[0.0, 1.0]);
    }

    #[test]
    fn label_features_require_labels() {
        let g = LabeledGraph::from_edges(2, &[(0, 1)], None, 0).unwrap();
        assert!(matches!(featurize(&g, FeatureScheme::NodeLabelOneHot, 3), Err(Error::Scheme(_))));
        let g = LabeledGraph::from_edges(2, &[(0, 1)], Some(vec![0, 4]), 0).unwrap();
        assert!(matches!(featurize(&g, FeatureScheme::NodeLabelOneHot, 3), Err(Error::Scheme(_))));
        let x = featurize(&g, FeatureScheme::NodeLabelOneHot, 5).unwrap();
        assert_eq!(x.row(1), &[0.0, 0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn normalization_examples() {
        assert_eq!(normalize_adjacency(&Matrix::zeros(1, 1)).as_slice(), &[1.0]);
        let two = Matrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]);
        let n = normalize_adjacency(&two);
        for &v in n.as_slice() {
            assert!((v - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn folds_small_case() {
        for seed in 0..10 {
            let folds = stratified_folds(&[0, 0, 1, 1], 2, seed).unwrap();
            for f in &folds {
                let mut classes: Vec<usize> = f.iter().map(|&i| [0, 0, 1, 1][i]).collect();
                classes.sort();
                assert_eq!(classes, vec![0, 1]);
            }
        }
        assert!(matches!(stratified_folds(&[0, 1], 3, 0), Err(Error::Config(_))));
        assert!(matches!(stratified_folds(&[0, 1], 1, 0), Err(Error::Config(_))));
    }

    #[test]
    fn folds_mutag_sized() {
        let labels: Vec<usize> = (0..188).map(|i| usize::from(i < 125)).collect();
        let folds = stratified_folds(&labels, 10, 7).unwrap();
        assert!(folds.iter().all(|f| f.len() == 18 || f.len() == 19));
        assert_eq!(folds, stratified_folds(&labels, 10, 7).unwrap());
    }
}
