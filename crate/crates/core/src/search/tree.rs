use crate::scenario::JointState;

pub type NodeId = usize;

/// Decision layer of a node. Ego and opponent layers alternate, ego first; the layer at
/// depth `2N` holds complete plans.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeKind {
    Ego,
    Opponent,
    Terminal,
}

impl NodeKind {
    pub fn at_depth(depth: usize, horizon: usize) -> NodeKind {
        if depth >= 2 * horizon {
            NodeKind::Terminal
        } else if depth.is_multiple_of(2) {
            NodeKind::Ego
        } else {
            NodeKind::Opponent
        }
    }

    /// Index of the agent deciding at this layer (0 ego, 1 opponent).
    pub fn decider(self) -> Option<usize> {
        match self {
            NodeKind::Ego => Some(0),
            NodeKind::Opponent => Some(1),
            NodeKind::Terminal => None,
        }
    }

    /// Layers whose state was produced by an opponent action (and the root).
    pub fn is_ego_layer(self) -> bool {
        matches!(self, NodeKind::Ego | NodeKind::Terminal)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GameNode {
    pub kind: NodeKind,
    pub depth: usize,
    /// `x_t` with `t = depth / 2`. Opponent nodes share the state of their parent.
    pub state: JointState,
    pub parent: Option<NodeId>,
    /// Action index that led from the parent to this node.
    pub action: Option<u8>,
    pub children: Vec<NodeId>,
    pub untried: Vec<u8>,
    /// Set once every expansion below this node turned out unsafe.
    pub dead: bool,
    pub visits: u64,
    /// Total roll-out reward per agent.
    pub q: [f64; 2],
    /// Total confidence-weighted roll-out reward per agent, used for selection only.
    pub qs: [f64; 2],
    /// Confidence weight of the opponent position in `state`.
    pub conf_weight: f64,
}

impl GameNode {
    pub fn mean(&self, agent: usize) -> f64 {
        if self.visits == 0 {
            0.0
        } else {
            self.q[agent] / self.visits as f64
        }
    }

    pub fn fully_expanded(&self) -> bool {
        self.untried.is_empty()
    }
}

/// Arena-allocated Stackelberg game tree.
#[derive(Debug, Clone, PartialEq)]
pub struct GameTree {
    nodes: Vec<GameNode>,
    horizon: usize,
    n_actions: usize,
}

impl GameTree {
    pub fn new(x0: JointState, horizon: usize, n_actions: usize, conf_weight: f64) -> Self {
        let root = GameNode {
            kind: NodeKind::at_depth(0, horizon),
            depth: 0,
            state: x0,
            parent: None,
            action: None,
            children: Vec::new(),
            untried: all_actions(n_actions),
            dead: false,
            visits: 0,
            q: [0.0; 2],
            qs: [0.0; 2],
            conf_weight,
        };
        GameTree {
            nodes: vec![root],
            horizon,
            n_actions,
        }
    }

    pub const ROOT: NodeId = 0;

    pub fn root(&self) -> &GameNode {
        &self.nodes[Self::ROOT]
    }

    pub fn node(&self, id: NodeId) -> &GameNode {
        &self.nodes[id]
    }

    pub(crate) fn node_mut(&mut self, id: NodeId) -> &mut GameNode {
        &mut self.nodes[id]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn nodes(&self) -> &[GameNode] {
        &self.nodes
    }

    pub fn children(&self, id: NodeId) -> impl Iterator<Item = (NodeId, &GameNode)> + '_ {
        self.nodes[id].children.iter().map(move |&c| (c, &self.nodes[c]))
    }

    pub(crate) fn add_child(&mut self, parent: NodeId, action: u8, state: JointState, conf_weight: f64) -> NodeId {
        let depth = self.nodes[parent].depth + 1;
        let kind = NodeKind::at_depth(depth, self.horizon);
        let untried = if kind == NodeKind::Terminal {
            Vec::new()
        } else {
            all_actions(self.n_actions)
        };
        let id = self.nodes.len();
        self.nodes.push(GameNode {
            kind,
            depth,
            state,
            parent: Some(parent),
            action: Some(action),
            children: Vec::new(),
            untried,
            dead: false,
            visits: 0,
            q: [0.0; 2],
            qs: [0.0; 2],
            conf_weight,
        });
        self.nodes[parent].children.push(id);
        id
    }

    /// Ego and opponent action indices accumulated from the root to `id`.
    pub fn sequences(&self, id: NodeId) -> (Vec<u8>, Vec<u8>) {
        let mut path = Vec::with_capacity(self.nodes[id].depth);
        let mut cur = id;
        while let (Some(parent), Some(action)) = (self.nodes[cur].parent, self.nodes[cur].action) {
            path.push((self.nodes[parent].depth, action));
            cur = parent;
        }
        path.reverse();
        let mut ego = Vec::with_capacity(self.horizon);
        let mut opp = Vec::with_capacity(self.horizon);
        for (parent_depth, action) in path {
            if parent_depth % 2 == 0 {
                ego.push(action);
            } else {
                opp.push(action);
            }
        }
        (ego, opp)
    }
}

fn all_actions(n: usize) -> Vec<u8> {
    (0..n).map(|i| i as u8).collect()
}
