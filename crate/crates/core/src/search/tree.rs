use serde::{Deserialize, Serialize};

use super::{SearchConfig, SearchError};
use crate::env::{Action, EnvSnapshot, Outcome, TaskSpec};
use crate::state::{AgentState, StateKey};

pub type NodeId = usize;

/// How a leaf was closed to further expansion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LeafKind {
    /// Not yet visited as a leaf, or expanded.
    Open,
    /// The critic score did not exceed the expansion threshold.
    Suppressed,
    /// The node sits at the depth cap.
    DepthCap,
    /// Non-terminal state without candidate actions.
    Stuck,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchEdge {
    pub action: Action,
    pub prior: f64,
    pub q: f64,
    pub visits: u64,
    pub child: Option<NodeId>,
}

impl SearchEdge {
    pub fn new(action: Action, prior: f64) -> Self {
        Self {
            action,
            prior,
            q: 0.0,
            visits: 0,
            child: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchNode {
    pub id: NodeId,
    pub parent: Option<NodeId>,
    /// Depth below the search root.
    pub depth: usize,
    pub key: StateKey,
    pub state: AgentState,
    pub candidates: Vec<Action>,
    pub visits: u64,
    /// Running mean of the returns credited to this node.
    pub value: f64,
    /// Number of returns averaged into `value`.
    pub value_samples: u64,
    pub edges: Vec<SearchEdge>,
    pub terminal: bool,
    pub outcome: Option<Outcome>,
    pub leaf: LeafKind,
    pub critic_score: Option<f64>,
    /// Return of the single rollout run when the node was closed.
    pub leaf_value: Option<f64>,
    #[serde(skip)]
    pub snapshot: Option<EnvSnapshot>,
}

impl SearchNode {
    pub fn new(state: AgentState, candidates: Vec<Action>, depth: usize) -> Self {
        Self {
            id: 0,
            parent: None,
            depth,
            key: state.key(),
            state,
            candidates,
            visits: 0,
            value: 0.0,
            value_samples: 0,
            edges: Vec::new(),
            terminal: false,
            outcome: None,
            leaf: LeafKind::Open,
            critic_score: None,
            leaf_value: None,
            snapshot: None,
        }
    }

    pub fn is_expanded(&self) -> bool {
        !self.edges.is_empty()
    }

    fn credit(&mut self, g: f64) {
        self.visits += 1;
        self.value_samples += 1;
        self.value += (g - self.value) / self.value_samples as f64;
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchStats {
    pub passes: u64,
    pub expansions: u64,
    pub suppressed: u64,
    pub rollouts: u64,
    pub terminal_hits: u64,
    pub critic_errors: u64,
}

/// Arena-allocated search tree; node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchTree {
    pub spec: Option<TaskSpec>,
    pub config: SearchConfig,
    pub seed: u64,
    pub nodes: Vec<SearchNode>,
    pub stats: SearchStats,
}

impl SearchTree {
    /// Tree with a single root that has already received one visit.
    pub fn new(spec: Option<TaskSpec>, config: SearchConfig, mut root: SearchNode) -> Self {
        root.id = 0;
        root.parent = None;
        root.depth = 0;
        root.visits = 1;
        Self {
            spec,
            seed: config.seed,
            config,
            nodes: vec![root],
            stats: SearchStats::default(),
        }
    }

    pub fn root(&self) -> &SearchNode {
        &self.nodes[0]
    }

    pub fn node(&self, id: NodeId) -> &SearchNode {
        &self.nodes[id]
    }

    /// Adds `child` under `parent` through a new edge; returns the edge index.
    pub fn attach(&mut self, parent: NodeId, action: Action, prior: f64, mut child: SearchNode) -> usize {
        let id = self.nodes.len();
        child.id = id;
        child.parent = Some(parent);
        child.depth = self.nodes[parent].depth + 1;
        self.nodes.push(child);
        let mut edge = SearchEdge::new(action, prior);
        edge.child = Some(id);
        self.nodes[parent].edges.push(edge);
        self.nodes[parent].edges.len() - 1
    }

    pub fn child(&self, node: NodeId, edge: usize) -> Option<NodeId> {
        self.nodes[node].edges.get(edge).and_then(|e| e.child)
    }

    /// Propagates a return from `leaf` up `path` (root-first pairs of node
    /// and chosen edge). Each edge is credited with the return as seen from
    /// its child, discounted once more per level above.
    pub fn backup(
        &mut self,
        path: &[(NodeId, usize)],
        leaf: NodeId,
        leaf_return: f64,
        gamma: f64,
    ) -> Result<(), SearchError> {
        if path.is_empty() && leaf != 0 {
            return Err(SearchError::Contract("backup path is empty".into()));
        }
        let mut g = leaf_return;
        self.nodes[leaf].credit(g);
        for &(n, e) in path.iter().rev() {
            let edge = self.nodes[n]
                .edges
                .get_mut(e)
                .ok_or_else(|| SearchError::Contract(format!("node {n} has no edge {e}")))?;
            edge.visits += 1;
            edge.q += (g - edge.q) / edge.visits as f64;
            g *= gamma;
            self.nodes[n].credit(g);
        }
        Ok(())
    }

    /// Root-to-node edge indices.
    pub fn path_to(&self, mut node: NodeId) -> Vec<(NodeId, usize)> {
        let mut path = Vec::new();
        while let Some(p) = self.nodes[node].parent {
            let e = self.nodes[p]
                .edges
                .iter()
                .position(|e| e.child == Some(node))
                .expect("parent links to child");
            path.push((p, e));
            node = p;
        }
        path.reverse();
        path
    }

    /// Actions along the root-to-node path.
    pub fn actions_to(&self, node: NodeId) -> Vec<Action> {
        self.path_to(node)
            .into_iter()
            .map(|(n, e)| self.nodes[n].edges[e].action.clone())
            .collect()
    }

    pub fn max_depth(&self) -> usize {
        self.nodes.iter().map(|n| n.depth).max().unwrap_or(0)
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.edges.is_empty()).count()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("tree serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, SearchError> {
        serde_json::from_str(text).map_err(|e| SearchError::Contract(format!("tree dump: {e}")))
    }
}

/// PUCT edge choice; ties go to the lowest index.
pub fn puct_select(node: &SearchNode, c_puct: f64) -> Result<usize, SearchError> {
    if node.edges.is_empty() {
        return Err(SearchError::Contract("puct_select on a node without edges".into()));
    }
    let sqrt_n = (node.visits as f64).sqrt();
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    for (i, e) in node.edges.iter().enumerate() {
        let score = puct_score(e.q, e.prior, sqrt_n, e.visits, c_puct);
        if score > best_score {
            best = i;
            best_score = score;
        }
    }
    Ok(best)
}

pub fn puct_score(q: f64, prior: f64, sqrt_parent_visits: f64, edge_visits: u64, c_puct: f64) -> f64 {
    q + c_puct * prior * sqrt_parent_visits / (1.0 + edge_visits as f64)
}

/// Most visited root action; ties prefer higher Q, then the lower index.
pub fn best_root_action(tree: &SearchTree) -> Result<Action, SearchError> {
    best_edge(tree.root())
        .map(|i| tree.root().edges[i].action.clone())
        .ok_or_else(|| SearchError::Contract("root has no edges".into()))
}

pub fn best_edge(node: &SearchNode) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, e) in node.edges.iter().enumerate() {
        best = match best {
            None => Some(i),
            Some(b) => {
                let cur = &node.edges[b];
                if e.visits > cur.visits || (e.visits == cur.visits && e.q > cur.q) {
                    Some(i)
                } else {
                    Some(b)
                }
            }
        };
    }
    best
}
