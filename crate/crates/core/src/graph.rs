//! Stable graphs with half-edges, canonical forms and enumeration.
//!
//! A graph is a set of half-edges with an incidence map to vertices and an
//! involution; fixed points of the involution are tails. Tails may carry a
//! positive label (0 means unlabeled).

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use num_bigint::BigUint;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("involution is not an involution at half-edge {0}")]
    BadInvolution(usize),
    #[error("half-edge {half_edge} points to vertex {vertex}, but there are only {count} vertices")]
    BadIncidence { half_edge: usize, vertex: usize, count: usize },
    #[error("label given on internal half-edge {0}")]
    LabelOnEdge(usize),
    #[error("no trivalent graph has {vertices} vertices and {tails} tails")]
    Infeasible { vertices: usize, tails: usize },
    #[error("size bound exceeded: {what} = {got} (limit {limit})")]
    SizeBound { what: &'static str, got: usize, limit: usize },
    #[error("not a boundary stratum: {0}")]
    InvalidStratum(String),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct StableGraph {
    genus: Vec<u32>,
    vertex_of: Vec<usize>,
    partner: Vec<usize>,
    label: Vec<u32>,
}

impl StableGraph {
    pub fn new(genus: Vec<u32>, vertex_of: Vec<usize>, partner: Vec<usize>, label: Vec<u32>) -> Result<Self, GraphError> {
        let h = vertex_of.len();
        if partner.len() != h || label.len() != h {
            return Err(GraphError::BadInvolution(h));
        }
        for (i, &p) in partner.iter().enumerate() {
            if p >= h || partner[p] != i {
                return Err(GraphError::BadInvolution(i));
            }
            if p != i && label[i] != 0 {
                return Err(GraphError::LabelOnEdge(i));
            }
        }
        for (i, &v) in vertex_of.iter().enumerate() {
            if v >= genus.len() {
                return Err(GraphError::BadIncidence { half_edge: i, vertex: v, count: genus.len() });
            }
        }
        Ok(StableGraph { genus, vertex_of, partner, label })
    }

    /// Genus-0 graph from an edge list and one entry per tail naming its vertex.
    pub fn from_edges(num_vertices: usize, edges: &[(usize, usize)], tails: &[usize]) -> Result<Self, GraphError> {
        let mut vertex_of = Vec::new();
        let mut partner = Vec::new();
        for &(a, b) in edges {
            let h = vertex_of.len();
            vertex_of.extend([a, b]);
            partner.extend([h + 1, h]);
        }
        for &v in tails {
            partner.push(vertex_of.len());
            vertex_of.push(v);
        }
        let n = vertex_of.len();
        Self::new(vec![0; num_vertices], vertex_of, partner, vec![0; n])
    }

    /// Edges as given; every vertex is topped up with tails to valency 3.
    pub fn trivalent(num_vertices: usize, edges: &[(usize, usize)]) -> Result<Self, GraphError> {
        let mut deg = vec![0usize; num_vertices];
        for &(a, b) in edges {
            deg[a] += 1;
            deg[b] += 1;
        }
        let mut tails = Vec::new();
        for (v, &d) in deg.iter().enumerate() {
            if d > 3 {
                return Err(GraphError::Infeasible { vertices: num_vertices, tails: 0 });
            }
            tails.extend(std::iter::repeat_n(v, 3 - d));
        }
        Self::from_edges(num_vertices, edges, &tails)
    }

    pub fn with_genus(mut self, genus: Vec<u32>) -> Self {
        assert_eq!(genus.len(), self.genus.len());
        self.genus = genus;
        self
    }

    /// Assigns labels to tails in half-edge order.
    pub fn with_tail_labels(mut self, labels: &[u32]) -> Self {
        let tails = self.tails();
        assert_eq!(tails.len(), labels.len());
        for (h, &l) in tails.iter().zip(labels) {
            self.label[*h] = l;
        }
        self
    }

    /// Sets the label of every tail `h` to `f(h)`.
    pub fn with_labels_by(mut self, f: impl Fn(usize) -> u32) -> Self {
        for h in self.tails() {
            self.label[h] = f(h);
        }
        self
    }

    pub fn num_vertices(&self) -> usize {
        self.genus.len()
    }

    pub fn num_half_edges(&self) -> usize {
        self.vertex_of.len()
    }

    pub fn vertex_genus(&self, v: usize) -> u32 {
        self.genus[v]
    }

    pub fn vertex_of(&self, h: usize) -> usize {
        self.vertex_of[h]
    }

    pub fn partner(&self, h: usize) -> usize {
        self.partner[h]
    }

    pub fn label(&self, h: usize) -> u32 {
        self.label[h]
    }

    pub fn is_tail(&self, h: usize) -> bool {
        self.partner[h] == h
    }

    pub fn tails(&self) -> Vec<usize> {
        (0..self.num_half_edges()).filter(|&h| self.is_tail(h)).collect()
    }

    /// Internal edges as half-edge pairs `(h, σh)` with `h < σh`.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        (0..self.num_half_edges()).filter(|&h| self.partner[h] > h).map(|h| (h, self.partner[h])).collect()
    }

    pub fn num_edges(&self) -> usize {
        self.edges().len()
    }

    pub fn num_tails(&self) -> usize {
        self.tails().len()
    }

    pub fn valency(&self, v: usize) -> usize {
        self.vertex_of.iter().filter(|&&w| w == v).count()
    }

    pub fn half_edges_at(&self, v: usize) -> Vec<usize> {
        (0..self.num_half_edges()).filter(|&h| self.vertex_of[h] == v).collect()
    }

    pub fn tails_at(&self, v: usize) -> Vec<usize> {
        self.half_edges_at(v).into_iter().filter(|&h| self.is_tail(h)).collect()
    }

    /// Symmetric multiplicity matrix; the diagonal counts self-loops.
    pub fn adjacency(&self) -> Vec<Vec<u32>> {
        let n = self.num_vertices();
        let mut a = vec![vec![0u32; n]; n];
        for (h1, h2) in self.edges() {
            let (u, w) = (self.vertex_of[h1], self.vertex_of[h2]);
            a[u][w] += 1;
            if u != w {
                a[w][u] += 1;
            }
        }
        a
    }

    pub fn components(&self) -> Vec<Vec<usize>> {
        let n = self.num_vertices();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(p: &mut [usize], x: usize) -> usize {
            let mut r = x;
            while p[r] != r {
                r = p[r];
            }
            let mut y = x;
            while p[y] != r {
                let nx = p[y];
                p[y] = r;
                y = nx;
            }
            r
        }
        for (h1, h2) in self.edges() {
            let a = find(&mut parent, self.vertex_of[h1]);
            let b = find(&mut parent, self.vertex_of[h2]);
            parent[a] = b;
        }
        let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for v in 0..n {
            let r = find(&mut parent, v);
            groups.entry(r).or_default().push(v);
        }
        let mut out: Vec<Vec<usize>> = groups.into_values().collect();
        out.sort();
        out
    }

    pub fn is_connected(&self) -> bool {
        self.components().len() == 1
    }

    /// Induced subgraph on `vs`, keeping edges to outside vertices as tails.
    pub fn restrict(&self, vs: &[usize]) -> StableGraph {
        let pos: HashMap<usize, usize> = vs.iter().enumerate().map(|(i, &v)| (v, i)).collect();
        let hs: Vec<usize> = (0..self.num_half_edges()).filter(|h| pos.contains_key(&self.vertex_of[*h])).collect();
        let hpos: HashMap<usize, usize> = hs.iter().enumerate().map(|(i, &h)| (h, i)).collect();
        let vertex_of = hs.iter().map(|h| pos[&self.vertex_of[*h]]).collect();
        let partner = hs.iter().enumerate().map(|(i, h)| *hpos.get(&self.partner[*h]).unwrap_or(&i)).collect();
        let label = hs.iter().map(|h| self.label[*h]).collect();
        let genus = vs.iter().map(|&v| self.genus[v]).collect();
        StableGraph { genus, vertex_of, partner, label }
    }

    /// Relabels by a vertex permutation (`vperm[old] = new`) and a half-edge
    /// permutation (`hperm[old] = new`).
    pub fn relabel(&self, vperm: &[usize], hperm: &[usize]) -> StableGraph {
        let nh = self.num_half_edges();
        let mut vertex_of = vec![0; nh];
        let mut partner = vec![0; nh];
        let mut label = vec![0; nh];
        for h in 0..nh {
            vertex_of[hperm[h]] = vperm[self.vertex_of[h]];
            partner[hperm[h]] = hperm[self.partner[h]];
            label[hperm[h]] = self.label[h];
        }
        let mut genus = vec![0; self.num_vertices()];
        for v in 0..self.num_vertices() {
            genus[vperm[v]] = self.genus[v];
        }
        StableGraph { genus, vertex_of, partner, label }
    }
}

/// `g(γ) = |E| - |V| + #components + Σ g(v)`.
pub fn genus(g: &StableGraph) -> i64 {
    let b1 = g.num_edges() as i64 - g.num_vertices() as i64 + g.components().len() as i64;
    b1 + g.genus.iter().map(|&x| x as i64).sum::<i64>()
}

pub fn is_stable(g: &StableGraph) -> bool {
    (0..g.num_vertices()).all(|v| match g.genus[v] {
        0 => g.valency(v) >= 3,
        1 => g.valency(v) >= 1,
        _ => true,
    })
}

pub fn has_self_loop(g: &StableGraph) -> bool {
    g.edges().iter().any(|&(a, b)| g.vertex_of[a] == g.vertex_of[b])
}

impl fmt::Display for StableGraph {
    /// Multi-line exchange format.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", render_lines(self).join("\n"))
    }
}

fn render_lines(g: &StableGraph) -> Vec<String> {
    let mut lines = vec![format!("V {}", g.num_vertices()), format!("T {}", g.num_tails())];
    let mut e = String::from("E:");
    for (a, b) in g.edges() {
        e += &format!(" ({},{})", g.vertex_of[a], g.vertex_of[b]);
    }
    lines.push(e);
    if g.genus.iter().any(|&x| x != 0) {
        lines.push(format!("G: {}", g.genus.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")));
    }
    let tails = g.tails();
    let tv: Vec<usize> = tails.iter().map(|&h| g.vertex_of[h]).collect();
    let mut sorted = tv.clone();
    sorted.sort_unstable();
    let trivalent = (0..g.num_vertices()).all(|v| g.valency(v) == 3);
    if !(trivalent && sorted == tv) {
        lines.push(format!("TV:{}", tv.iter().map(|v| format!(" {v}")).collect::<String>()));
    }
    if tails.iter().any(|&h| g.label[h] != 0) {
        lines.push(format!("L:{}", tails.iter().map(|&h| format!(" {}", g.label[h])).collect::<String>()));
    }
    lines
}

/// Single-line exchange format (`V k / T m / E: ...`).
pub fn render_line(g: &StableGraph) -> String {
    render_lines(g).join(" / ")
}

/// Parses the exchange format; records may be split by newlines or ` / `.
pub fn parse_graph(text: &str) -> Result<StableGraph, GraphError> {
    let mut v: Option<usize> = None;
    let mut t: Option<usize> = None;
    let mut edges: Option<Vec<(usize, usize)>> = None;
    let mut genus: Option<Vec<u32>> = None;
    let mut tv: Option<Vec<usize>> = None;
    let mut labels: Option<Vec<u32>> = None;
    let err = |line: usize, msg: String| GraphError::Parse { line, msg };
    let nums = |s: &str, line: usize| -> Result<Vec<usize>, GraphError> {
        s.split_whitespace().map(|x| x.parse::<usize>().map_err(|_| err(line, format!("bad number `{x}`")))).collect()
    };
    let records = text.lines().enumerate().flat_map(|(i, l)| l.split(" / ").map(move |r| (i + 1, r.trim().to_string())));
    for (line, rec) in records {
        if rec.is_empty() || rec.starts_with('#') {
            continue;
        }
        if let Some(rest) = rec.strip_prefix("TV:") {
            tv = Some(nums(rest, line)?);
        } else if let Some(rest) = rec.strip_prefix("E:") {
            let mut es = Vec::new();
            for tok in rest.split_whitespace() {
                let inner = tok.strip_prefix('(').and_then(|s| s.strip_suffix(')')).ok_or_else(|| err(line, format!("bad edge `{tok}`")))?;
                let (a, b) = inner.split_once(',').ok_or_else(|| err(line, format!("bad edge `{tok}`")))?;
                let a = a.trim().parse().map_err(|_| err(line, format!("bad edge `{tok}`")))?;
                let b = b.trim().parse().map_err(|_| err(line, format!("bad edge `{tok}`")))?;
                es.push((a, b));
            }
            edges = Some(es);
        } else if let Some(rest) = rec.strip_prefix("G:") {
            genus = Some(nums(rest, line)?.into_iter().map(|x| x as u32).collect());
        } else if let Some(rest) = rec.strip_prefix("L:") {
            labels = Some(nums(rest, line)?.into_iter().map(|x| x as u32).collect());
        } else if let Some(rest) = rec.strip_prefix("V ") {
            v = Some(nums(rest, line)?.first().copied().ok_or_else(|| err(line, "missing vertex count".into()))?);
        } else if let Some(rest) = rec.strip_prefix("T ") {
            t = Some(nums(rest, line)?.first().copied().ok_or_else(|| err(line, "missing tail count".into()))?);
        } else {
            return Err(err(line, format!("unrecognised record `{rec}`")));
        }
    }
    let v = v.ok_or_else(|| err(0, "missing `V` record".into()))?;
    let t = t.ok_or_else(|| err(0, "missing `T` record".into()))?;
    let edges = edges.unwrap_or_default();
    if let Some(&(a, b)) = edges.iter().find(|(a, b)| *a >= v || *b >= v) {
        return Err(err(0, format!("edge ({a},{b}) references a vertex outside 0..{v}")));
    }
    let tails = match tv {
        Some(tv) => tv,
        None => {
            let mut deg = vec![0usize; v];
            for &(a, b) in &edges {
                deg[a] += 1;
                deg[b] += 1;
            }
            let mut tails = Vec::new();
            for (x, &d) in deg.iter().enumerate() {
                if d > 3 {
                    return Err(err(0, format!("vertex {x} has degree {d} > 3; give tails explicitly with TV:")));
                }
                tails.extend(std::iter::repeat_n(x, 3 - d));
            }
            tails
        }
    };
    if tails.len() != t {
        return Err(err(0, format!("tail count {t} does not match the {} tails implied by the edges", tails.len())));
    }
    if let Some(&x) = tails.iter().find(|&&x| x >= v) {
        return Err(err(0, format!("tail on vertex {x} outside 0..{v}")));
    }
    let mut g = StableGraph::from_edges(v, &edges, &tails)?;
    if let Some(gs) = genus {
        if gs.len() != v {
            return Err(err(0, format!("G: lists {} genera for {v} vertices", gs.len())));
        }
        g = g.with_genus(gs);
    }
    if let Some(ls) = labels {
        if ls.len() != t {
            return Err(err(0, format!("L: lists {} labels for {t} tails", ls.len())));
        }
        g = g.with_tail_labels(&ls);
    }
    Ok(g)
}

// ---------------------------------------------------------------------------
// Canonical form

type Color = (u32, u32, Vec<u32>);

fn base_colors(g: &StableGraph) -> Vec<Color> {
    let adj = g.adjacency();
    (0..g.num_vertices())
        .map(|v| {
            let mut ls: Vec<u32> = g.tails_at(v).iter().map(|&h| g.label[h]).collect();
            ls.sort_unstable();
            (g.genus[v], adj[v][v], ls)
        })
        .collect()
}

/// Iterated neighbourhood refinement; returns dense colour ids, ordered so
/// that the ids sort the same way on isomorphic graphs.
fn refined_colors(g: &StableGraph, adj: &[Vec<u32>]) -> Vec<usize> {
    let n = g.num_vertices();
    let base = base_colors(g);
    let mut sorted: Vec<Color> = base.clone();
    sorted.sort();
    sorted.dedup();
    let mut col: Vec<usize> = base.iter().map(|c| sorted.binary_search(c).unwrap()).collect();
    loop {
        let sig: Vec<(usize, Vec<(usize, u32)>)> = (0..n)
            .map(|v| {
                let mut nb: Vec<(usize, u32)> = (0..n).filter(|&w| w != v && adj[v][w] > 0).map(|w| (col[w], adj[v][w])).collect();
                nb.sort_unstable();
                (col[v], nb)
            })
            .collect();
        let mut s = sig.clone();
        s.sort();
        s.dedup();
        let next: Vec<usize> = sig.iter().map(|x| s.binary_search(x).unwrap()).collect();
        let classes_before = col.iter().collect::<std::collections::HashSet<_>>().len();
        if s.len() == classes_before {
            return next;
        }
        col = next;
    }
}

struct Search<'a> {
    adj: &'a [Vec<u32>],
    col: &'a [usize],
    target: Vec<usize>,
    order: Vec<usize>,
    used: Vec<bool>,
    key: Vec<u32>,
    best: Option<(Vec<u32>, Vec<usize>)>,
    count: u64,
}

impl Search<'_> {
    fn run(&mut self, depth: usize) {
        let n = self.col.len();
        if depth == n {
            match &self.best {
                Some((bk, _)) if *bk == self.key => self.count += 1,
                Some((bk, _)) if self.key > *bk => {}
                _ => {
                    self.best = Some((self.key.clone(), self.order.clone()));
                    self.count = 1;
                }
            }
            return;
        }
        for v in 0..n {
            if self.used[v] || self.col[v] != self.target[depth] {
                continue;
            }
            let start = self.key.len();
            for &u in &self.order {
                self.key.push(self.adj[u][v]);
            }
            let prune = matches!(&self.best, Some((bk, _)) if self.key[..] > bk[..self.key.len()]);
            if !prune {
                self.used[v] = true;
                self.order.push(v);
                self.run(depth + 1);
                self.order.pop();
                self.used[v] = false;
            }
            self.key.truncate(start);
        }
    }
}

/// Returns a canonical vertex order and the number of vertex permutations
/// preserving colours and adjacency.
fn canonical_order(g: &StableGraph) -> (Vec<usize>, u64) {
    let adj = g.adjacency();
    let col = refined_colors(g, &adj);
    let mut target = col.clone();
    target.sort_unstable();
    let n = g.num_vertices();
    let mut s = Search { adj: &adj, col: &col, target, order: Vec::new(), used: vec![false; n], key: Vec::new(), best: None, count: 0 };
    s.run(0);
    let order = s.best.map(|b| b.1).unwrap_or_default();
    (order, s.count.max(1))
}

/// Rebuilds `g` with vertices in `order` and half-edges in a fixed layout:
/// edges sorted by endpoint, then tails sorted by vertex and label.
fn rebuild(g: &StableGraph, order: &[usize]) -> StableGraph {
    let n = g.num_vertices();
    let mut pos = vec![0; n];
    for (p, &v) in order.iter().enumerate() {
        pos[v] = p;
    }
    let mut edges: Vec<(usize, usize)> = g
        .edges()
        .iter()
        .map(|&(a, b)| {
            let (x, y) = (pos[g.vertex_of[a]], pos[g.vertex_of[b]]);
            (x.min(y), x.max(y))
        })
        .collect();
    edges.sort_unstable();
    let mut tails: Vec<(usize, u32)> = g.tails().iter().map(|&h| (pos[g.vertex_of[h]], g.label[h])).collect();
    tails.sort_unstable();
    let tv: Vec<usize> = tails.iter().map(|t| t.0).collect();
    let labels: Vec<u32> = tails.iter().map(|t| t.1).collect();
    let genus: Vec<u32> = order.iter().map(|&v| g.genus[v]).collect();
    StableGraph::from_edges(n, &edges, &tv).expect("rebuild keeps validity").with_genus(genus).with_tail_labels(&labels)
}

/// Canonical representative: isomorphic graphs give identical results.
pub fn canonical_form(g: &StableGraph) -> StableGraph {
    let (order, _) = canonical_order(g);
    rebuild(g, &order)
}

/// Canonical representative together with the old-to-new vertex map.
pub fn canonical_with_map(g: &StableGraph) -> (StableGraph, Vec<usize>) {
    let (order, _) = canonical_order(g);
    let mut pos = vec![0; order.len()];
    for (p, &v) in order.iter().enumerate() {
        pos[v] = p;
    }
    (rebuild(g, &order), pos)
}

pub fn canonical_key(g: &StableGraph) -> String {
    render_line(&canonical_form(g))
}

fn factorial_u64(k: u64) -> u64 {
    (1..=k).product::<u64>().max(1)
}

/// Half-edge automorphisms fixing every vertex: permutations of parallel
/// edges, flips and permutations of loops, and permutations of equally
/// labelled tails at a vertex.
pub fn vertex_fixing_factor(g: &StableGraph) -> u64 {
    let adj = g.adjacency();
    let n = g.num_vertices();
    let mut f = 1u64;
    for u in 0..n {
        for w in u + 1..n {
            f *= factorial_u64(adj[u][w] as u64);
        }
        let l = adj[u][u] as u64;
        f *= factorial_u64(l) * (1u64 << l);
        let mut counts: BTreeMap<u32, u64> = BTreeMap::new();
        for h in g.tails_at(u) {
            *counts.entry(g.label[h]).or_default() += 1;
        }
        for c in counts.values() {
            f *= factorial_u64(*c);
        }
    }
    f
}

pub const AUT_VERTEX_LIMIT: usize = 12;

/// Order of the half-edge automorphism group preserving σ, π, genus labels
/// and tail labels.
pub fn automorphism_order(g: &StableGraph) -> Result<u64, GraphError> {
    if g.num_vertices() > AUT_VERTEX_LIMIT {
        return Err(GraphError::SizeBound { what: "vertices", got: g.num_vertices(), limit: AUT_VERTEX_LIMIT });
    }
    let (_, vertex_aut) = canonical_order(g);
    Ok(vertex_aut * vertex_fixing_factor(g))
}

/// Isomorphism class of a graph.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GraphClass {
    /// Canonical representative.
    pub graph: StableGraph,
    pub key: String,
    pub aut: u64,
    /// Connected-component classes with multiplicities.
    pub components: Vec<(String, usize)>,
}

impl GraphClass {
    pub fn of(g: &StableGraph) -> Result<Self, GraphError> {
        let graph = canonical_form(g);
        let key = render_line(&graph);
        let aut = automorphism_order(&graph)?;
        let mut comps: BTreeMap<String, usize> = BTreeMap::new();
        for c in graph.components() {
            *comps.entry(canonical_key(&graph.restrict(&c))).or_default() += 1;
        }
        Ok(GraphClass { graph, key, aut, components: comps.into_iter().collect() })
    }
}

// ---------------------------------------------------------------------------
// Enumeration

/// Calls `visit` with every symmetric multiplicity matrix whose row sums
/// (loops counted twice) equal `degrees`.
pub fn for_each_multigraph(degrees: &[u32], loops: bool, visit: &mut dyn FnMut(&[Vec<u32>])) {
    struct Fill<'a> {
        n: usize,
        loops: bool,
        adj: Vec<Vec<u32>>,
        rem: Vec<u32>,
        visit: &'a mut dyn FnMut(&[Vec<u32>]),
    }
    impl Fill<'_> {
        fn row(&mut self, i: usize) {
            if i == self.n {
                (self.visit)(&self.adj);
                return;
            }
            let max_loops = if self.loops { self.rem[i] / 2 } else { 0 };
            for l in 0..=max_loops {
                self.adj[i][i] = l;
                self.rem[i] -= 2 * l;
                self.col(i, i + 1);
                self.rem[i] += 2 * l;
            }
            self.adj[i][i] = 0;
        }

        fn col(&mut self, i: usize, j: usize) {
            if j == self.n {
                if self.rem[i] == 0 {
                    self.row(i + 1);
                }
                return;
            }
            if self.rem[j..].iter().sum::<u32>() < self.rem[i] {
                return;
            }
            for m in 0..=self.rem[i].min(self.rem[j]) {
                self.adj[i][j] = m;
                self.adj[j][i] = m;
                self.rem[i] -= m;
                self.rem[j] -= m;
                self.col(i, j + 1);
                self.rem[i] += m;
                self.rem[j] += m;
            }
            self.adj[i][j] = 0;
            self.adj[j][i] = 0;
        }
    }
    let n = degrees.len();
    let mut f = Fill { n, loops, adj: vec![vec![0; n]; n], rem: degrees.to_vec(), visit };
    f.row(0);
}

/// Graph from a multiplicity matrix plus per-vertex tail counts and genera.
pub fn graph_from_adjacency(adj: &[Vec<u32>], tails: &[u32], genus: &[u32]) -> StableGraph {
    let n = adj.len();
    let mut edges = Vec::new();
    for u in 0..n {
        for w in u..n {
            for _ in 0..adj[u][w] {
                edges.push((u, w));
            }
        }
    }
    let tv: Vec<usize> = (0..n).flat_map(|v| std::iter::repeat_n(v, tails[v] as usize)).collect();
    StableGraph::from_edges(n, &edges, &tv).expect("valid by construction").with_genus(genus.to_vec())
}

/// All isomorphism classes with the given per-vertex genera, edge degrees and
/// tail counts, merged into `out` by canonical key.
pub fn collect_classes(
    genus: &[u32],
    degrees: &[u32],
    tails: &[u32],
    loops: bool,
    connected: bool,
    out: &mut BTreeMap<String, GraphClass>,
) -> Result<(), GraphError> {
    let mut err = None;
    let interchangeable = (1..degrees.len()).all(|v| (genus[v], degrees[v], tails[v]) == (genus[0], degrees[0], tails[0]));
    for_each_multigraph(degrees, loops, &mut |adj| {
        if err.is_some() || (interchangeable && !root_normalized(adj)) {
            return;
        }
        let g = graph_from_adjacency(adj, tails, genus);
        if connected && !g.is_connected() {
            return;
        }
        let key = canonical_key(&g);
        if let std::collections::btree_map::Entry::Vacant(slot) = out.entry(key) {
            match GraphClass::of(&g) {
                Ok(c) => {
                    slot.insert(c);
                }
                Err(e) => err = Some(e),
            }
        }
    });
    err.map_or(Ok(()), Err)
}

/// With interchangeable vertices every class has a labelling in which vertex 0
/// has the largest neighbourhood profile and its neighbours come next, by
/// decreasing multiplicity. Other labellings are skipped.
fn root_normalized(adj: &[Vec<u32>]) -> bool {
    let n = adj.len();
    let profile = |v: usize| {
        let mut m: Vec<u32> = (0..n).filter(|&w| w != v).map(|w| adj[v][w]).collect();
        m.sort_unstable_by(|a, b| b.cmp(a));
        (adj[v][v], m)
    };
    let p0 = profile(0);
    if (1..n).any(|v| profile(v) > p0) {
        return false;
    }
    let k = (1..n).filter(|&w| adj[0][w] > 0).count();
    adj[0][1..=k].iter().all(|&m| m > 0) && adj[0][1..=k].windows(2).all(|x| x[0] >= x[1])
}

pub const ENUMERATION_VERTEX_LIMIT: usize = 8;

/// Non-increasing sequences of length `len` with entries in `0..=max` summing to `total`.
pub fn sorted_compositions(len: usize, total: u32, max: u32) -> Vec<Vec<u32>> {
    fn go(len: usize, total: u32, cap: u32, cur: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if cur.len() == len {
            if total == 0 {
                out.push(cur.clone());
            }
            return;
        }
        let slots = (len - cur.len()) as u32;
        for x in (0..=cap.min(total)).rev() {
            if x * slots < total {
                break;
            }
            cur.push(x);
            go(len, total - x, x, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    go(len, total, max, &mut Vec::new(), &mut out);
    out
}

/// Isomorphism classes of genus-0 trivalent graphs without self-loops.
pub fn enumerate_trivalent(num_vertices: usize, num_tails: usize, allow_disconnected: bool) -> Result<Vec<GraphClass>, GraphError> {
    if num_vertices > ENUMERATION_VERTEX_LIMIT {
        return Err(GraphError::SizeBound { what: "vertices", got: num_vertices, limit: ENUMERATION_VERTEX_LIMIT });
    }
    if num_tails > 3 * num_vertices || !(3 * num_vertices - num_tails).is_multiple_of(2) {
        return Err(GraphError::Infeasible { vertices: num_vertices, tails: num_tails });
    }
    if num_vertices == 0 {
        let empty = StableGraph::from_edges(0, &[], &[])?;
        return Ok(if allow_disconnected { vec![GraphClass::of(&empty)?] } else { Vec::new() });
    }
    let mut out = BTreeMap::new();
    for tails in sorted_compositions(num_vertices, num_tails as u32, 3) {
        let degrees: Vec<u32> = tails.iter().map(|t| 3 - t).collect();
        collect_classes(&vec![0; num_vertices], &degrees, &tails, false, !allow_disconnected, &mut out)?;
    }
    Ok(out.into_values().collect())
}

/// Graph classes entering the partition sum for half-dimension `n` and first
/// Betti number `b1`: `2n` trivalent vertices, each carrying one tail for
/// every label `1..=b1`.
pub fn admissible_partition_graphs(n: usize, b1: usize) -> Result<Vec<GraphClass>, GraphError> {
    if b1 > 3 {
        return Ok(Vec::new());
    }
    let v = 2 * n;
    if v > ENUMERATION_VERTEX_LIMIT {
        return Err(GraphError::SizeBound { what: "vertices", got: v, limit: ENUMERATION_VERTEX_LIMIT });
    }
    if v == 0 {
        return Ok(vec![GraphClass::of(&StableGraph::from_edges(0, &[], &[])?)?]);
    }
    let mut raw = BTreeMap::new();
    collect_classes(&vec![0; v], &vec![3 - b1 as u32; v], &vec![b1 as u32; v], false, false, &mut raw)?;
    let mut out = BTreeMap::new();
    for class in raw.into_values() {
        let labels: Vec<u32> = (0..v).flat_map(|_| 1..=b1 as u32).collect();
        let g = class.graph.with_tail_labels(&labels);
        let c = GraphClass::of(&g)?;
        out.insert(c.key.clone(), c);
    }
    Ok(out.into_values().collect())
}

// ---------------------------------------------------------------------------
// Boundary strata

/// Vertex subsets of size at least 2 inducing a connected subgraph.
pub fn boundary_strata(g: &StableGraph) -> Result<Vec<Vec<usize>>, GraphError> {
    let n = g.num_vertices();
    if n > 20 {
        return Err(GraphError::SizeBound { what: "vertices", got: n, limit: 20 });
    }
    let mut out = Vec::new();
    for mask in 1u32..(1u32 << n) {
        if mask.count_ones() < 2 {
            continue;
        }
        let vs: Vec<usize> = (0..n).filter(|v| mask >> v & 1 == 1).collect();
        if g.restrict(&vs).is_connected() {
            out.push(vs);
        }
    }
    out.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum StratumKind {
    /// `|S| >= 3`.
    VanishesKontsevich,
    /// Two vertices sharing at least two edges.
    TwoVertexMultiEdge,
    /// Two vertices joined by exactly one edge; `m`, `n` count the remaining
    /// half-edges at each vertex.
    TwoVertexSingleEdge { m: usize, n: usize },
}

pub fn classify_stratum(g: &StableGraph, s: &[usize]) -> Result<StratumKind, GraphError> {
    let mut vs = s.to_vec();
    vs.sort_unstable();
    vs.dedup();
    if vs.len() != s.len() || vs.len() < 2 || vs.iter().any(|&v| v >= g.num_vertices()) || !g.restrict(&vs).is_connected() {
        return Err(GraphError::InvalidStratum(format!("{s:?}")));
    }
    if vs.len() >= 3 {
        return Ok(StratumKind::VanishesKontsevich);
    }
    let shared = g.adjacency()[vs[0]][vs[1]] as usize;
    if shared >= 2 {
        Ok(StratumKind::TwoVertexMultiEdge)
    } else {
        Ok(StratumKind::TwoVertexSingleEdge { m: g.valency(vs[0]) - 1, n: g.valency(vs[1]) - 1 })
    }
}

// ---------------------------------------------------------------------------
// Cohomology tables

/// Dimensions of compactly supported cohomology of the genus-`g` handlebody
/// in degrees 0..=3.
pub fn handlebody_cohomology(genus: u32) -> [u64; 4] {
    [0, 0, genus as u64, 1]
}

/// Coefficients of `((1+s)^{2n})^g`, the graded dimension of `(∧ C^{2n})^{⊗g}`.
pub fn observable_fiber_character(n: usize, genus: usize) -> Vec<BigUint> {
    let m = 2 * n * genus;
    let mut row = vec![BigUint::from(1u32)];
    for _ in 0..m {
        let mut next = vec![BigUint::from(0u32); row.len() + 1];
        for (i, c) in row.iter().enumerate() {
            next[i] += c;
            next[i + 1] += c;
        }
        row = next;
    }
    row
}

// ---------------------------------------------------------------------------
// Brute-force oracles

/// Slow reference implementations used to cross-check the fast paths.
pub mod oracle {
    use super::*;

    /// Counts vertex bijections `a -> b` preserving colours and adjacency by
    /// plain backtracking.
    fn vertex_isomorphisms(a: &StableGraph, b: &StableGraph, stop_at_first: bool) -> u64 {
        if a.num_vertices() != b.num_vertices() {
            return 0;
        }
        let (ca, cb) = (base_colors(a), base_colors(b));
        let (aa, ab) = (a.adjacency(), b.adjacency());
        let n = a.num_vertices();
        let mut map = vec![usize::MAX; n];
        let mut used = vec![false; n];
        #[allow(clippy::too_many_arguments)]
        fn go(i: usize, n: usize, ca: &[Color], cb: &[Color], aa: &[Vec<u32>], ab: &[Vec<u32>], map: &mut Vec<usize>, used: &mut Vec<bool>, stop: bool) -> u64 {
            if i == n {
                return 1;
            }
            let mut count = 0;
            for w in 0..n {
                if used[w] || ca[i] != cb[w] || (0..i).any(|u| aa[u][i] != ab[map[u]][w]) {
                    continue;
                }
                map[i] = w;
                used[w] = true;
                count += go(i + 1, n, ca, cb, aa, ab, map, used, stop);
                used[w] = false;
                if stop && count > 0 {
                    return count;
                }
            }
            count
        }
        go(0, n, &ca, &cb, &aa, &ab, &mut map, &mut used, stop_at_first)
    }

    /// Counts vertex permutations preserving everything, then lifts.
    pub fn vertex_permutation_aut(g: &StableGraph) -> u64 {
        vertex_isomorphisms(g, g, false) * vertex_fixing_factor(g)
    }

    pub fn isomorphic(a: &StableGraph, b: &StableGraph) -> bool {
        a.num_half_edges() == b.num_half_edges() && vertex_isomorphisms(a, b, true) > 0
    }

    /// Counts half-edge bijections commuting with σ and compatible with a
    /// vertex bijection, by direct backtracking.
    pub fn half_edge_aut(g: &StableGraph) -> u64 {
        let nh = g.num_half_edges();
        let nv = g.num_vertices();
        let mut phi = vec![usize::MAX; nh];
        let mut used = vec![false; nh];
        let mut psi = vec![usize::MAX; nv];
        let mut psi_used = vec![false; nv];
        fn go(h: usize, g: &StableGraph, phi: &mut Vec<usize>, used: &mut Vec<bool>, psi: &mut Vec<usize>, psi_used: &mut Vec<bool>) -> u64 {
            let nh = g.num_half_edges();
            if h == nh {
                return 1;
            }
            let mut total = 0;
            let v = g.vertex_of(h);
            for t in 0..nh {
                if used[t] || g.label(t) != g.label(h) || g.is_tail(t) != g.is_tail(h) {
                    continue;
                }
                let w = g.vertex_of(t);
                let fresh = psi[v] == usize::MAX;
                if fresh {
                    if psi_used[w] || g.vertex_genus(v) != g.vertex_genus(w) || g.valency(v) != g.valency(w) {
                        continue;
                    }
                } else if psi[v] != w {
                    continue;
                }
                let p = g.partner(h);
                if p < h && phi[p] != g.partner(t) {
                    continue;
                }
                if p == h && t != g.partner(t) {
                    continue;
                }
                if p > h && used[g.partner(t)] && g.partner(t) != t {
                    continue;
                }
                phi[h] = t;
                used[t] = true;
                if fresh {
                    psi[v] = w;
                    psi_used[w] = true;
                }
                total += go(h + 1, g, phi, used, psi, psi_used);
                if fresh {
                    psi[v] = usize::MAX;
                    psi_used[w] = false;
                }
                used[t] = false;
                phi[h] = usize::MAX;
            }
            total
        }
        let count = go(0, g, &mut phi, &mut used, &mut psi, &mut psi_used);
        // Vertices without half-edges can be permuted freely among equal genera.
        let mut iso: BTreeMap<u32, u64> = BTreeMap::new();
        for v in 0..nv {
            if g.valency(v) == 0 {
                *iso.entry(g.vertex_genus(v)).or_default() += 1;
            }
        }
        count * iso.values().map(|&c| factorial_u64(c)).product::<u64>()
    }

    /// Labelled loop-free multigraphs obtained by pairing `stubs[v]` stubs at
    /// each vertex in every possible way, deduplicated as labelled graphs.
    pub fn raw_matchings(stubs: &[usize]) -> Vec<Vec<Vec<u32>>> {
        let n = stubs.len();
        let list: Vec<usize> = (0..n).flat_map(|v| std::iter::repeat_n(v, stubs[v])).collect();
        let mut seen = std::collections::BTreeSet::new();
        if list.len() % 2 == 1 {
            return Vec::new();
        }
        fn go(rest: &mut Vec<usize>, adj: &mut Vec<Vec<u32>>, seen: &mut std::collections::BTreeSet<Vec<Vec<u32>>>) {
            if rest.is_empty() {
                seen.insert(adj.clone());
                return;
            }
            let first = rest.remove(0);
            for i in 0..rest.len() {
                let other = rest.remove(i);
                if other != first {
                    adj[first][other] += 1;
                    adj[other][first] += 1;
                    go(rest, adj, seen);
                    adj[first][other] -= 1;
                    adj[other][first] -= 1;
                }
                rest.insert(i, other);
            }
            rest.insert(0, first);
        }
        go(&mut list.clone(), &mut vec![vec![0; n]; n], &mut seen);
        seen.into_iter().collect()
    }

    /// Every labelled trivalent loop-free graph with the given tail count.
    pub fn raw_matching_trivalent(num_vertices: usize, num_tails: usize) -> Vec<StableGraph> {
        let mut out = Vec::new();
        let mut dists = Vec::new();
        fn comps(v: usize, left: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
            if cur.len() == v {
                if left == 0 {
                    out.push(cur.clone());
                }
                return;
            }
            for t in 0..=3.min(left) {
                cur.push(t);
                comps(v, left - t, cur, out);
                cur.pop();
            }
        }
        comps(num_vertices, num_tails, &mut Vec::new(), &mut dists);
        for tails in dists {
            let stubs: Vec<usize> = tails.iter().map(|t| 3 - t).collect();
            let tails32: Vec<u32> = tails.iter().map(|&t| t as u32).collect();
            for adj in raw_matchings(&stubs) {
                out.push(graph_from_adjacency(&adj, &tails32, &vec![0; num_vertices]));
            }
        }
        out
    }

    /// Every labelled graph for the partition sum at (`n`, `b1`), with each
    /// vertex's tails labelled `1..=b1`.
    pub fn raw_admissible(n: usize, b1: usize) -> Vec<StableGraph> {
        let v = 2 * n;
        if b1 > 3 {
            return Vec::new();
        }
        let labels: Vec<u32> = (0..v).flat_map(|_| 1..=b1 as u32).collect();
        raw_matchings(&vec![3 - b1; v]).iter().map(|adj| graph_from_adjacency(adj, &vec![b1 as u32; v], &vec![0; v]).with_tail_labels(&labels)).collect()
    }

    /// Connected induced subsets of size at least 2 by subset enumeration
    /// with a separate reachability test.
    pub fn count_connected_subsets(g: &StableGraph) -> usize {
        let n = g.num_vertices();
        let adj = g.adjacency();
        let mut count = 0;
        for mask in 0u32..(1 << n) {
            if mask.count_ones() < 2 {
                continue;
            }
            let start = mask.trailing_zeros() as usize;
            let mut seen = 1u32 << start;
            let mut stack = vec![start];
            while let Some(u) = stack.pop() {
                for w in 0..n {
                    if mask >> w & 1 == 1 && seen >> w & 1 == 0 && adj[u][w] > 0 {
                        seen |= 1 << w;
                        stack.push(w);
                    }
                }
            }
            if seen == mask {
                count += 1;
            }
        }
        count
    }
}
