//! Co-editing networks and their eight summary measures.
//!
//! An edge `A -> B` means developer B changed or removed a line last
//! touched by A. Repeated events give parallel edges and editing one's
//! own line gives a self-loop.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ownership::{EditEvent, EditKind, EventRow};

#[derive(Debug, thiserror::Error)]
pub enum NetworkError {
    #[error("correlation matrix is not symmetric at ({0}, {1})")]
    NonSymmetric(usize, usize),
    #[error("correlation matrix is {rows}x{cols} but {names} feature names were given")]
    Shape { rows: usize, cols: usize, names: usize },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Anything that can contribute an edge.
pub trait CoEdit {
    fn editor(&self) -> &str;
    fn previous_owner(&self) -> Option<&str>;
    fn kind(&self) -> EditKind;
    fn merge_edge(&self) -> bool {
        false
    }
}

impl CoEdit for EditEvent {
    fn editor(&self) -> &str {
        &self.editor
    }
    fn previous_owner(&self) -> Option<&str> {
        self.previous_owner.as_deref()
    }
    fn kind(&self) -> EditKind {
        self.kind
    }
    fn merge_edge(&self) -> bool {
        self.from_merge
    }
}

impl CoEdit for EventRow {
    fn editor(&self) -> &str {
        &self.editor
    }
    fn previous_owner(&self) -> Option<&str> {
        self.previous_owner.as_deref()
    }
    fn kind(&self) -> EditKind {
        self.kind
    }
}

/// Directed multigraph keyed by developer identity.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CoEditGraph {
    pub nodes: BTreeSet<String>,
    /// `(from, to) -> multiplicity`
    pub edges: BTreeMap<(String, String), usize>,
}

impl CoEditGraph {
    pub fn edge_count(&self) -> usize {
        self.edges.values().sum()
    }

    pub fn add_node(&mut self, id: &str) {
        if !self.nodes.contains(id) {
            self.nodes.insert(id.to_string());
        }
    }

    pub fn add_edge(&mut self, from: &str, to: &str) {
        self.add_node(from);
        self.add_node(to);
        *self.edges.entry((from.to_string(), to.to_string())).or_default() += 1;
    }

    /// Adds developers active in the window who took part in no event.
    pub fn add_members<'a, I: IntoIterator<Item = &'a str>>(&mut self, members: I) {
        for m in members {
            self.add_node(m);
        }
    }

    pub fn write_edges<W: Write>(&self, writer: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["from", "to", "multiplicity"])?;
        for ((a, b), m) in &self.edges {
            w.write_record([a.as_str(), b.as_str(), &m.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads an edge list. Isolated nodes are not recoverable from it.
    pub fn read_edges<R: Read>(reader: R) -> Result<Self, csv::Error> {
        let mut g = CoEditGraph::default();
        for rec in csv::Reader::from_reader(reader).deserialize() {
            let (a, b, m): (String, String, usize) = rec?;
            g.add_node(&a);
            g.add_node(&b);
            *g.edges.entry((a, b)).or_default() += m;
        }
        Ok(g)
    }
}

/// One node per editor and previous owner, one edge per change or
/// removal of an owned line. Merge events are skipped.
pub fn build_coedit_graph<'a, E: CoEdit + 'a, I: IntoIterator<Item = &'a E>>(events: I) -> CoEditGraph {
    let mut g = CoEditGraph::default();
    for e in events {
        if e.merge_edge() {
            continue;
        }
        g.add_node(e.editor());
        if let Some(owner) = e.previous_owner() {
            g.add_node(owner);
            if e.kind() != EditKind::Addition {
                g.add_edge(owner, e.editor());
            }
        }
    }
    g
}

/// Collapses parallel edges. Self-loops stay, with multiplicity one.
pub fn flatten(g: &CoEditGraph) -> CoEditGraph {
    CoEditGraph { nodes: g.nodes.clone(), edges: g.edges.keys().map(|k| (k.clone(), 1)).collect() }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct NetworkMetrics {
    pub n: usize,
    pub edges: usize,
    pub dens: f64,
    pub diam: usize,
    pub clustc: f64,
    pub ind: f64,
    pub fmodr: f64,
    pub eigg: f64,
}

impl NetworkMetrics {
    pub fn values(&self) -> [f64; 8] {
        [
            self.n as f64,
            self.edges as f64,
            self.dens,
            self.diam as f64,
            self.clustc,
            self.ind,
            self.fmodr,
            self.eigg,
        ]
    }

    pub fn from_values(v: [f64; 8]) -> Self {
        Self {
            n: v[0] as usize,
            edges: v[1] as usize,
            dens: v[2],
            diam: v[3] as usize,
            clustc: v[4],
            ind: v[5],
            fmodr: v[6],
            eigg: v[7],
        }
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        crate::windows::NETWORK_MEASURES.iter().position(|m| *m == name).map(|i| self.values()[i])
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpectralGap {
    /// λ1 - λ2 of the adjacency matrix.
    #[default]
    Adjacency,
    /// Second smallest eigenvalue of the normalised Laplacian.
    NormalizedLaplacian,
}

/// Undirected, loop-free, flattened view with indices into the sorted
/// node list.
pub struct Undirected {
    pub adj: Vec<BTreeSet<usize>>,
}

impl Undirected {
    pub fn of(g: &CoEditGraph) -> Self {
        let index: BTreeMap<&str, usize> = g.nodes.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
        let mut adj = vec![BTreeSet::new(); g.nodes.len()];
        for (a, b) in g.edges.keys() {
            let (i, j) = (index[a.as_str()], index[b.as_str()]);
            if i != j {
                adj[i].insert(j);
                adj[j].insert(i);
            }
        }
        Self { adj }
    }

    pub fn len(&self) -> usize {
        self.adj.len()
    }

    pub fn is_empty(&self) -> bool {
        self.adj.is_empty()
    }

    fn bfs(&self, src: usize) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.len()];
        dist[src] = Some(0);
        let mut q = VecDeque::from([src]);
        while let Some(u) = q.pop_front() {
            let d = dist[u].unwrap();
            for &v in &self.adj[u] {
                if dist[v].is_none() {
                    dist[v] = Some(d + 1);
                    q.push_back(v);
                }
            }
        }
        dist
    }

    /// Node indices of the largest connected component; ties go to the
    /// component holding the smallest index.
    pub fn largest_component(&self) -> Vec<usize> {
        let mut seen = vec![false; self.len()];
        let mut best: Vec<usize> = Vec::new();
        for s in 0..self.len() {
            if seen[s] {
                continue;
            }
            let comp: Vec<usize> =
                self.bfs(s).iter().enumerate().filter_map(|(i, d)| d.map(|_| i)).collect();
            for &i in &comp {
                seen[i] = true;
            }
            if comp.len() > best.len() {
                best = comp;
            }
        }
        best
    }

    pub fn diameter(&self, component: &[usize]) -> usize {
        component.iter().map(|&s| self.bfs(s).into_iter().flatten().max().unwrap_or(0)).max().unwrap_or(0)
    }

    pub fn local_clustering(&self, i: usize) -> f64 {
        let nb = &self.adj[i];
        let k = nb.len();
        if k < 2 {
            return 0.0;
        }
        let links: usize = nb.iter().map(|&u| self.adj[u].intersection(nb).count()).sum::<usize>() / 2;
        links as f64 / (k * (k - 1) / 2) as f64
    }

    pub fn mean_clustering(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        (0..self.len()).map(|i| self.local_clustering(i)).sum::<f64>() / self.len() as f64
    }

    fn submatrix(&self, component: &[usize]) -> Vec<Vec<f64>> {
        let pos: BTreeMap<usize, usize> = component.iter().enumerate().map(|(k, &i)| (i, k)).collect();
        let m = component.len();
        let mut a = vec![vec![0.0; m]; m];
        for (k, &i) in component.iter().enumerate() {
            for j in &self.adj[i] {
                if let Some(&l) = pos.get(j) {
                    a[k][l] = 1.0;
                }
            }
        }
        a
    }

    /// Spectral gap of the given (connected) component.
    pub fn spectral_gap(&self, component: &[usize], kind: SpectralGap) -> f64 {
        if component.len() <= 1 {
            return 0.0;
        }
        let mut a = self.submatrix(component);
        match kind {
            SpectralGap::Adjacency => {
                let (l1, l2) = top_two_eigenvalues(&a);
                (l1 - l2).max(0.0)
            }
            SpectralGap::NormalizedLaplacian => {
                // Eigenvalues of I - D^-1/2 A D^-1/2 are 1 - μ for μ those
                // of D^-1/2 A D^-1/2, so the second smallest is 1 - μ2.
                let d: Vec<f64> = a.iter().map(|r| r.iter().sum::<f64>().sqrt()).collect();
                for (i, row) in a.iter_mut().enumerate() {
                    for (j, x) in row.iter_mut().enumerate() {
                        *x /= d[i] * d[j];
                    }
                }
                let (_, mu2) = top_two_eigenvalues(&a);
                (1.0 - mu2).max(0.0)
            }
        }
    }
}

/// Computes the eight measures. `team_size` is the number of developers
/// committing in the window.
pub fn network_metrics(g: &CoEditGraph, team_size: usize, gap: SpectralGap) -> NetworkMetrics {
    let n = g.nodes.len();
    if n == 0 {
        return NetworkMetrics::default();
    }
    let flat = flatten(g);
    let non_loop = flat.edges.keys().filter(|(a, b)| a != b).count();
    let dens = if n >= 2 { non_loop as f64 / (n * (n - 1)) as f64 } else { 0.0 };

    let und = Undirected::of(g);
    let lcc = und.largest_component();

    let ind = flat.edges.len() as f64 / n as f64;

    let mut incoming: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for ((a, b), m) in &g.edges {
        let e = incoming.entry(b.as_str()).or_default();
        e.1 += m;
        if a != b {
            e.0 += m;
        }
    }
    let ratio_sum: f64 = incoming.values().map(|&(foreign, all)| foreign as f64 / all as f64).sum();
    let denom = team_size.max(incoming.len());
    let fmodr = if denom == 0 { 0.0 } else { ratio_sum / denom as f64 };

    NetworkMetrics {
        n,
        edges: g.edge_count(),
        dens,
        diam: und.diameter(&lcc),
        clustc: und.mean_clustering(),
        ind,
        fmodr,
        eigg: und.spectral_gap(&lcc, gap),
    }
}

// ---------------------------------------------------------------------------
// Eigenvalues

const LANCZOS_MAX_DIM: usize = 200;

/// Two largest eigenvalues of a symmetric matrix with at least two rows.
/// Lanczos with full reorthogonalisation builds a Krylov basis (restarting
/// on breakdown) and the tridiagonal projection is diagonalised by Jacobi
/// rotations.
pub fn top_two_eigenvalues(a: &[Vec<f64>]) -> (f64, f64) {
    let n = a.len();
    assert!(n >= 2, "need at least a 2x2 matrix");
    let dim = n.min(LANCZOS_MAX_DIM);
    let mut rng = ChaCha8Rng::seed_from_u64(0x1a2c_2053);
    let matvec = |v: &[f64]| -> Vec<f64> { a.iter().map(|row| dot(row, v)).collect() };

    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(dim);
    let mut alpha = Vec::with_capacity(dim);
    let mut beta: Vec<f64> = Vec::with_capacity(dim);
    let mut next = random_unit(&mut rng, n, &basis);
    while basis.len() < dim {
        let q = match next.take() {
            Some(q) => q,
            None => {
                beta.push(0.0);
                match random_unit(&mut rng, n, &basis) {
                    Some(q) => q,
                    None => break,
                }
            }
        };
        let mut w = matvec(&q);
        let al = dot(&w, &q);
        basis.push(q);
        alpha.push(al);
        for _ in 0..2 {
            for b in &basis {
                let c = dot(&w, b);
                axpy(&mut w, -c, b);
            }
        }
        let norm = dot(&w, &w).sqrt();
        if basis.len() == dim {
            break;
        }
        if norm > 1e-10 {
            beta.push(norm);
            next = Some(w.iter().map(|x| x / norm).collect());
        }
    }
    let k = alpha.len();
    let mut t = vec![vec![0.0; k]; k];
    for i in 0..k {
        t[i][i] = alpha[i];
        if i + 1 < k {
            t[i][i + 1] = beta[i];
            t[i + 1][i] = beta[i];
        }
    }
    let mut ev = jacobi_eigenvalues(t);
    ev.sort_by(|x, y| y.total_cmp(x));
    (ev[0], ev.get(1).copied().unwrap_or(ev[0]))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(y: &mut [f64], c: f64, x: &[f64]) {
    for (a, b) in y.iter_mut().zip(x) {
        *a += c * b;
    }
}

/// Random unit vector orthogonal to `basis`, or `None` if the basis
/// already spans the space.
fn random_unit(rng: &mut ChaCha8Rng, n: usize, basis: &[Vec<f64>]) -> Option<Vec<f64>> {
    if basis.len() >= n {
        return None;
    }
    for _ in 0..8 {
        let mut v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        for _ in 0..2 {
            for b in basis {
                let c = dot(&v, b);
                axpy(&mut v, -c, b);
            }
        }
        let norm = dot(&v, &v).sqrt();
        if norm > 1e-8 {
            return Some(v.into_iter().map(|x| x / norm).collect());
        }
    }
    None
}

/// Eigenvalues of a small dense symmetric matrix by cyclic Jacobi sweeps.
pub fn jacobi_eigenvalues(mut a: Vec<Vec<f64>>) -> Vec<f64> {
    let n = a.len();
    for _ in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum();
        let scale: f64 = a.iter().flatten().map(|x| x * x).sum::<f64>().max(1e-300);
        if off <= 1e-30 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    (0..n).map(|i| a[i][i]).collect()
}

// ---------------------------------------------------------------------------
// Feature clustering

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureCluster {
    pub members: Vec<String>,
    pub representative: String,
}

/// Groups features by single linkage on `|r| >= threshold` and picks the
/// first member found in `preferred` (falling back to the first member by
/// name). Missing correlations never link.
pub fn feature_cluster_select(
    corr: &[Vec<Option<f64>>],
    names: &[String],
    threshold: f64,
    preferred: &[String],
) -> Result<Vec<FeatureCluster>, NetworkError> {
    let n = names.len();
    if corr.len() != n || corr.iter().any(|r| r.len() != n) {
        return Err(NetworkError::Shape { rows: corr.len(), cols: corr.first().map_or(0, Vec::len), names: n });
    }
    for i in 0..n {
        for j in i + 1..n {
            let sym = match (corr[i][j], corr[j][i]) {
                (Some(a), Some(b)) => (a - b).abs() <= 1e-9,
                (None, None) => true,
                _ => false,
            };
            if !sym {
                return Err(NetworkError::NonSymmetric(i, j));
            }
        }
    }
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], x: usize) -> usize {
        let mut r = x;
        while p[r] != r {
            r = p[r];
        }
        p[x] = r;
        r
    }
    for i in 0..n {
        for j in i + 1..n {
            if corr[i][j].is_some_and(|r| r.abs() >= threshold) {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                parent[a.max(b)] = a.min(b);
            }
        }
    }
    let mut groups: BTreeMap<usize, Vec<String>> = BTreeMap::new();
    for i in 0..n {
        let root = find(&mut parent, i);
        groups.entry(root).or_default().push(names[i].clone());
    }
    Ok(groups
        .into_values()
        .map(|mut members| {
            members.sort();
            let representative = preferred
                .iter()
                .find(|p| members.contains(p))
                .cloned()
                .unwrap_or_else(|| members[0].clone());
            FeatureCluster { members, representative }
        })
        .collect())
}
