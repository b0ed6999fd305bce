//! Two-group Lotka–Volterra systems, sign patterns and network topology.
//!
//! ```text
//! dx_i/dt = x_i (-r_i + sum_k a_ik v_k - sum_j gamma_ij x_j)
//! dv_j/dt = v_j ( rbar_j - sum_l b_jl x_l - sum_k d_jk v_k)
//! ```

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, HlvError, Result};

/// The full two-group model. `N` "prey-like" species `x`, `M` generalists `v`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InteractionSystem {
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "M")]
    pub m: usize,
    pub r: Vec<f64>,
    pub rbar: Vec<f64>,
    /// `N x M`, row-major.
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    /// `M x N`, row-major.
    #[serde(rename = "B")]
    pub b: Vec<Vec<f64>>,
    /// `N x N`; zeros when omitted.
    #[serde(rename = "Gamma", default)]
    pub gamma: Vec<Vec<f64>>,
    /// `M x M`; zeros when omitted.
    #[serde(rename = "D", default)]
    pub d: Vec<Vec<f64>>,
}

fn check_matrix(name: &str, m: &[Vec<f64>], rows: usize, cols: usize) -> Result<()> {
    if m.len() != rows || m.iter().any(|row| row.len() != cols) {
        return Err(HlvError::Dimension(format!(
            "`{name}` must be {rows}x{cols}"
        )));
    }
    if m.iter().flatten().any(|v| !v.is_finite()) {
        return Err(invalid(name, "entries must be finite"));
    }
    Ok(())
}

fn to_dmatrix(m: &[Vec<f64>], rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |i, j| m[i][j])
}

impl InteractionSystem {
    /// Builds and validates a limitation-free system.
    pub fn new(r: Vec<f64>, rbar: Vec<f64>, a: Vec<Vec<f64>>, b: Vec<Vec<f64>>) -> Result<Self> {
        let (n, m) = (r.len(), rbar.len());
        let mut s = Self {
            n,
            m,
            r,
            rbar,
            a,
            b,
            gamma: Vec::new(),
            d: Vec::new(),
        };
        s.normalize()?;
        Ok(s)
    }

    pub fn with_limitation(mut self, gamma: Vec<Vec<f64>>, d: Vec<Vec<f64>>) -> Result<Self> {
        self.gamma = gamma;
        self.d = d;
        self.normalize()?;
        Ok(self)
    }

    /// Fills omitted self-limitation blocks with zeros and validates.
    fn normalize(&mut self) -> Result<()> {
        if self.gamma.is_empty() {
            self.gamma = vec![vec![0.0; self.n]; self.n];
        }
        if self.d.is_empty() {
            self.d = vec![vec![0.0; self.m]; self.m];
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.m == 0 {
            return Err(invalid("N/M", "both groups must be non-empty"));
        }
        if self.r.len() != self.n {
            return Err(HlvError::Dimension(format!("`r` must have length N = {}", self.n)));
        }
        if self.rbar.len() != self.m {
            return Err(HlvError::Dimension(format!("`rbar` must have length M = {}", self.m)));
        }
        if self.r.iter().chain(&self.rbar).any(|v| !v.is_finite()) {
            return Err(invalid("r/rbar", "entries must be finite"));
        }
        check_matrix("A", &self.a, self.n, self.m)?;
        check_matrix("B", &self.b, self.m, self.n)?;
        check_matrix("Gamma", &self.gamma, self.n, self.n)?;
        check_matrix("D", &self.d, self.m, self.m)?;
        Ok(())
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let mut sys: Self = serde_json::from_str(s)?;
        sys.normalize()?;
        Ok(sys)
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn a_matrix(&self) -> DMatrix<f64> {
        to_dmatrix(&self.a, self.n, self.m)
    }
    pub fn b_matrix(&self) -> DMatrix<f64> {
        to_dmatrix(&self.b, self.m, self.n)
    }
    pub fn gamma_matrix(&self) -> DMatrix<f64> {
        to_dmatrix(&self.gamma, self.n, self.n)
    }
    pub fn d_matrix(&self) -> DMatrix<f64> {
        to_dmatrix(&self.d, self.m, self.m)
    }

    pub fn is_limitation_free(&self) -> bool {
        self.gamma.iter().flatten().chain(self.d.iter().flatten()).all(|&v| v == 0.0)
    }

    /// Per-capita growth rates `(dx_i/dt)/x_i` and `(dv_j/dt)/v_j`.
    pub fn per_capita(&self, x: &[f64], v: &[f64], gx: &mut [f64], gv: &mut [f64]) {
        for i in 0..self.n {
            let mut s = -self.r[i];
            for k in 0..self.m {
                s += self.a[i][k] * v[k];
            }
            for j in 0..self.n {
                s -= self.gamma[i][j] * x[j];
            }
            gx[i] = s;
        }
        for j in 0..self.m {
            let mut s = self.rbar[j];
            for l in 0..self.n {
                s -= self.b[j][l] * x[l];
            }
            for k in 0..self.m {
                s -= self.d[j][k] * v[k];
            }
            gv[j] = s;
        }
    }

    /// The right-hand side in abundance coordinates.
    pub fn rhs(&self, x: &[f64], v: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut gx = vec![0.0; self.n];
        let mut gv = vec![0.0; self.m];
        self.per_capita(x, v, &mut gx, &mut gv);
        for i in 0..self.n {
            gx[i] *= x[i];
        }
        for j in 0..self.m {
            gv[j] *= v[j];
        }
        (gx, gv)
    }

    pub fn classify_signs(&self) -> SignPattern {
        classify_signs(self)
    }
}

/// Interaction sign classes: predator–prey, mutualism (facultative /
/// obligatory) and competition; anything else is `Mixed`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SignPattern {
    PP,
    MF,
    MO,
    C,
    Mixed,
}

impl fmt::Display for SignPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SignPattern::PP => "PP",
            SignPattern::MF => "MF",
            SignPattern::MO => "MO",
            SignPattern::C => "C",
            SignPattern::Mixed => "Mixed",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Copy)]
enum Sign {
    NonNeg,
    NonPos,
    Pos,
    Neg,
}

impl Sign {
    fn holds(self, v: f64) -> bool {
        match self {
            Sign::NonNeg => v >= 0.0,
            Sign::NonPos => v <= 0.0,
            Sign::Pos => v > 0.0,
            Sign::Neg => v < 0.0,
        }
    }
}

/// Returns the first class (in the order PP, MF, MO, C) whose inequalities
/// hold for every coefficient; zero entries satisfy weak inequalities.
pub fn classify_signs(sys: &InteractionSystem) -> SignPattern {
    use Sign::*;
    let table = [
        (SignPattern::PP, NonNeg, NonNeg, Pos, Pos),
        (SignPattern::MF, NonNeg, NonPos, Neg, Pos),
        (SignPattern::MO, NonNeg, NonPos, Pos, Neg),
        (SignPattern::C, NonPos, NonNeg, Pos, Pos),
    ];
    for (tag, sa, sb, sr, srb) in table {
        let ok = sys.a.iter().flatten().all(|&v| sa.holds(v))
            && sys.b.iter().flatten().all(|&v| sb.holds(v))
            && sys.r.iter().all(|&v| sr.holds(v))
            && sys.rbar.iter().all(|&v| srb.holds(v));
        if ok {
            return tag;
        }
    }
    SignPattern::Mixed
}

/// Undirected simple graph with optional bipartition labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkTopology {
    pub n_nodes: usize,
    /// Stored as `(min, max)` pairs.
    pub edges: BTreeSet<(usize, usize)>,
    pub bipartition: Option<Vec<u8>>,
}

impl NetworkTopology {
    pub fn new(n_nodes: usize) -> Self {
        Self {
            n_nodes,
            edges: BTreeSet::new(),
            bipartition: None,
        }
    }

    pub fn from_edges(n_nodes: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut t = Self::new(n_nodes);
        for (u, v) in edges {
            t.add_edge(u, v)?;
        }
        Ok(t)
    }

    /// Adds an edge; returns `false` when it was already present.
    pub fn add_edge(&mut self, u: usize, v: usize) -> Result<bool> {
        if u == v {
            return Err(invalid("edges", format!("self-loop at node {u}")));
        }
        if u >= self.n_nodes || v >= self.n_nodes {
            return Err(invalid("edges", format!("edge ({u}, {v}) out of range")));
        }
        Ok(self.edges.insert((u.min(v), u.max(v))))
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.edges.contains(&(u.min(v), u.max(v)))
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut d = vec![0; self.n_nodes];
        for &(u, v) in &self.edges {
            d[u] += 1;
            d[v] += 1;
        }
        d
    }

    pub fn neighbors(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.n_nodes];
        for &(u, v) in &self.edges {
            adj[u].push(v);
            adj[v].push(u);
        }
        adj
    }

    pub fn connectance(&self) -> Result<f64> {
        connectance(self)
    }

    /// Edge-list text: one `u v` pair per line, 0-based. Lines starting with
    /// `#` are ignored; the node count is inferred unless given.
    pub fn from_edge_list(text: &str, n_nodes: Option<usize>) -> Result<Self> {
        let mut pairs = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut it = line.split_whitespace();
            let parse = |s: Option<&str>| -> Result<usize> {
                s.and_then(|s| s.parse().ok())
                    .ok_or_else(|| invalid("edges", format!("line {}: expected `u v`", lineno + 1)))
            };
            let u = parse(it.next())?;
            let v = parse(it.next())?;
            if it.next().is_some() {
                return Err(invalid("edges", format!("line {}: expected `u v`", lineno + 1)));
            }
            pairs.push((u, v));
        }
        let inferred = pairs.iter().map(|&(u, v)| u.max(v) + 1).max().unwrap_or(0);
        let n = n_nodes.unwrap_or(inferred);
        Self::from_edges(n, pairs)
    }

    pub fn to_edge_list(&self) -> String {
        let mut s = String::new();
        for &(u, v) in &self.edges {
            s.push_str(&format!("{u} {v}\n"));
        }
        s
    }
}

/// `2|E| / (n (n - 1))`.
pub fn connectance(t: &NetworkTopology) -> Result<f64> {
    if t.n_nodes < 2 {
        return Err(invalid("n_nodes", "connectance needs at least 2 nodes"));
    }
    let n = t.n_nodes as f64;
    Ok(2.0 * t.edges.len() as f64 / (n * (n - 1.0)))
}

/// Preferential attachment: a clique on `m_attach + 1` nodes, then each new
/// node links to `m_attach` distinct existing nodes chosen with probability
/// proportional to degree.
pub fn generate_scale_free(n_nodes: usize, m_attach: usize, seed: u64) -> Result<NetworkTopology> {
    if m_attach < 1 || n_nodes <= m_attach {
        return Err(invalid(
            "n_nodes/m_attach",
            format!("need n_nodes > m_attach >= 1 (got {n_nodes}, {m_attach})"),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = NetworkTopology::new(n_nodes);
    // Each edge endpoint appears once: sampling uniformly from this list is
    // sampling proportional to degree.
    let mut ends: Vec<usize> = Vec::with_capacity(2 * n_nodes * m_attach);
    for u in 0..=m_attach {
        for v in (u + 1)..=m_attach {
            t.add_edge(u, v)?;
            ends.push(u);
            ends.push(v);
        }
    }
    let mut chosen: Vec<usize> = Vec::with_capacity(m_attach);
    for new in (m_attach + 1)..n_nodes {
        chosen.clear();
        while chosen.len() < m_attach {
            let cand = ends[rng.gen_range(0..ends.len())];
            if !chosen.contains(&cand) {
                chosen.push(cand);
            }
        }
        for &c in &chosen {
            t.add_edge(new, c)?;
            ends.push(new);
            ends.push(c);
        }
    }
    Ok(t)
}

/// Discrete power-law exponent by maximum likelihood on degrees `>= x_min`
/// (Clauset–Shalizi–Newman approximation). `None` with fewer than 2 samples.
pub fn fit_power_law(degrees: &[usize], x_min: usize) -> Option<f64> {
    let tail: Vec<f64> = degrees.iter().filter(|&&d| d >= x_min).map(|&d| d as f64).collect();
    if tail.len() < 2 || x_min == 0 {
        return None;
    }
    let base = x_min as f64 - 0.5;
    let s: f64 = tail.iter().map(|d| (d / base).ln()).sum();
    Some(1.0 + tail.len() as f64 / s)
}

/// Number of non-hub nodes adjacent to at least two hubs.
pub fn overlap_count(t: &NetworkTopology, hubs: &[usize]) -> usize {
    let is_hub = {
        let mut v = vec![false; t.n_nodes];
        for &h in hubs {
            if h < t.n_nodes {
                v[h] = true;
            }
        }
        v
    };
    let mut hits = vec![0usize; t.n_nodes];
    for &(u, v) in &t.edges {
        if is_hub[u] && !is_hub[v] {
            hits[v] += 1;
        }
        if is_hub[v] && !is_hub[u] {
            hits[u] += 1;
        }
    }
    hits.iter().filter(|&&h| h >= 2).count()
}

/// Nodes with the largest degree, ties broken by lower index.
pub fn top_degree_nodes(t: &NetworkTopology, k: usize) -> Vec<usize> {
    let d = t.degrees();
    let mut idx: Vec<usize> = (0..t.n_nodes).collect();
    idx.sort_by(|&a, &b| d[b].cmp(&d[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(r: f64, rbar: f64, a: f64, b: f64) -> InteractionSystem {
        InteractionSystem::new(vec![r], vec![rbar], vec![vec![a]], vec![vec![b]]).unwrap()
    }

    #[test]
    fn sign_examples() {
        assert_eq!(one(1.0, 1.0, 1.0, 1.0).classify_signs(), SignPattern::PP);
        assert_eq!(one(-1.0, 1.0, 1.0, -1.0).classify_signs(), SignPattern::MF);
        assert_eq!(one(1.0, -1.0, 1.0, -1.0).classify_signs(), SignPattern::MO);
        assert_eq!(one(1.0, 1.0, -1.0, 1.0).classify_signs(), SignPattern::C);
        let mixed = InteractionSystem::new(
            vec![1.0, 1.0],
            vec![1.0],
            vec![vec![1.0], vec![-1.0]],
            vec![vec![1.0, 1.0]],
        )
        .unwrap();
        assert_eq!(mixed.classify_signs(), SignPattern::Mixed);
    }

    #[test]
    fn json_defaults_and_errors() {
        let s = r#"{"N":1,"M":1,"r":[1],"rbar":[1],"A":[[1]],"B":[[1]]}"#;
        let sys = InteractionSystem::from_json_str(s).unwrap();
        assert!(sys.is_limitation_free());
        assert_eq!(sys.gamma, vec![vec![0.0]]);
        let bad = r#"{"N":2,"M":1,"r":[1],"rbar":[1],"A":[[1]],"B":[[1]]}"#;
        let err = InteractionSystem::from_json_str(bad).unwrap_err().to_string();
        assert!(err.contains("`r`"), "{err}");
    }

    #[test]
    fn connectance_examples() {
        let t = NetworkTopology::from_edges(3, [(0, 1), (1, 2)]).unwrap();
        assert!((connectance(&t).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(connectance(&NetworkTopology::new(4)).unwrap(), 0.0);
        assert!(connectance(&NetworkTopology::new(1)).is_err());
    }

    #[test]
    fn topology_rejects_loops() {
        let mut t = NetworkTopology::new(3);
        assert!(t.add_edge(1, 1).is_err());
        assert!(t.add_edge(0, 1).unwrap());
        assert!(!t.add_edge(1, 0).unwrap());
    }

    #[test]
    fn saturated_attachment_is_complete() {
        let t = generate_scale_free(5, 4, 1).unwrap();
        assert_eq!(t.edges.len(), 10);
    }

    #[test]
    fn overlap_examples() {
        let star = NetworkTopology::from_edges(4, [(0, 1), (0, 2), (0, 3)]).unwrap();
        assert_eq!(overlap_count(&star, &[0]), 0);
        let two = NetworkTopology::from_edges(3, [(0, 2), (1, 2)]).unwrap();
        assert_eq!(overlap_count(&two, &[0, 1]), 1);
    }

    #[test]
    fn edge_list_round_trip() {
        let t = generate_scale_free(30, 2, 9).unwrap();
        let back = NetworkTopology::from_edge_list(&t.to_edge_list(), Some(30)).unwrap();
        assert_eq!(t, back);
        assert!(NetworkTopology::from_edge_list("0 1 2\n", None).is_err());
    }
}
