//! Monte Carlo tree search over the measurement-noise covariance `R`.
//!
//! Each tree level re-chooses `R` for one more fused step of the remaining
//! horizon. A node's value is the discounted rollout return of its path, as
//! scored by an [`RSimulator`]; the search returns the root child with the
//! most visits.

use rand::Rng;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const DEFAULT_CANDIDATES: [f64; 7] = [0.001, 0.005, 0.01, 0.05, 0.1, 0.5, 1.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct MctsConfig {
    pub iterations: usize,
    pub exploration_c: f64,
    /// Factor applied to C after every UCB selection within one descent.
    pub c_decay: f64,
    /// Probability of descending to a uniformly random child.
    pub epsilon: f64,
    pub candidates: Vec<f64>,
    pub gamma: f64,
}

impl Default for MctsConfig {
    fn default() -> Self {
        Self {
            iterations: 1000,
            exploration_c: 7.0,
            c_decay: 0.995,
            epsilon: 0.1,
            candidates: DEFAULT_CANDIDATES.to_vec(),
            gamma: 0.99,
        }
    }
}

impl MctsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.candidates.is_empty() {
            return Err(Error::InvalidParameter("mcts.candidates is empty".into()));
        }
        if let Some(r) = self.candidates.iter().find(|r| !(**r > 0.0 && r.is_finite())) {
            return Err(Error::InvalidParameter(format!("mcts candidate R must be positive, got {r}")));
        }
        if self.iterations == 0 {
            return Err(Error::InvalidParameter("mcts.iterations must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.epsilon) || !(self.c_decay > 0.0) || !(self.exploration_c >= 0.0) {
            return Err(Error::InvalidParameter("mcts epsilon/c_decay/exploration_c out of range".into()));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::InvalidParameter(format!("mcts.gamma must lie in (0, 1], got {}", self.gamma)));
        }
        Ok(())
    }
}

/// Score of one simulated path of `R` choices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimOutcome {
    pub value: f64,
    /// 1-based rollout step at which a collision occurred.
    pub collided_at: Option<usize>,
}

/// Scores a sequence of `R` choices; `path[0]` belongs to the root child.
pub trait RSimulator {
    fn evaluate(&mut self, path: &[f64]) -> Result<SimOutcome>;
}

impl<F: FnMut(&[f64]) -> Result<SimOutcome>> RSimulator for F {
    fn evaluate(&mut self, path: &[f64]) -> Result<SimOutcome> {
        self(path)
    }
}

/// UCB1 score with discounted accumulated value `value`.
pub fn ucb1(value: f64, visits: u64, parent_visits: u64, c: f64) -> f64 {
    if visits == 0 {
        return f64::INFINITY;
    }
    let n = visits as f64;
    value / n + c * ((parent_visits as f64).ln() / n).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RootStat {
    #[serde(rename = "R")]
    pub r: f64,
    pub visits: u64,
    pub mean_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    #[serde(rename = "R")]
    pub r: f64,
    pub root_children: Vec<RootStat>,
    pub simulations: usize,
}

#[derive(Debug, Clone)]
struct Node {
    r: f64,
    depth: usize,
    parent: Option<usize>,
    children: Vec<usize>,
    visits: u64,
    value: f64,
    reward: Option<f64>,
    terminal: bool,
}

struct Tree<'c> {
    nodes: Vec<Node>,
    config: &'c MctsConfig,
    max_depth: usize,
}

impl<'c> Tree<'c> {
    fn new(config: &'c MctsConfig, max_depth: usize) -> Self {
        let root = Node {
            r: f64::NAN,
            depth: 0,
            parent: None,
            children: Vec::new(),
            visits: 0,
            value: 0.0,
            reward: Some(0.0),
            terminal: max_depth == 0,
        };
        Self {
            nodes: vec![root],
            config,
            max_depth,
        }
    }

    /// Walk from the root to a node without children. `c_trace` receives
    /// the C used at each UCB selection.
    fn descend<R: Rng + ?Sized>(&self, rng: &mut R, c_trace: Option<&mut Vec<f64>>) -> usize {
        let mut trace = c_trace;
        let mut c = self.config.exploration_c;
        let mut node = 0;
        while !self.nodes[node].children.is_empty() {
            let children = &self.nodes[node].children;
            node = if rng.random::<f64>() < self.config.epsilon {
                children[rng.random_range(0..children.len())]
            } else {
                if let Some(t) = trace.as_deref_mut() {
                    t.push(c);
                }
                let parent_visits = self.nodes[node].visits;
                let mut best = children[0];
                let mut best_score = f64::NEG_INFINITY;
                for &ch in children {
                    let n = &self.nodes[ch];
                    let score = ucb1(n.value, n.visits, parent_visits, c);
                    if score > best_score {
                        best = ch;
                        best_score = score;
                    }
                }
                c *= self.config.c_decay;
                best
            };
        }
        node
    }

    fn path(&self, mut node: usize) -> Vec<f64> {
        let mut path = Vec::with_capacity(self.nodes[node].depth);
        while let Some(parent) = self.nodes[node].parent {
            path.push(self.nodes[node].r);
            node = parent;
        }
        path.reverse();
        path
    }

    fn expand(&mut self, node: usize) {
        let depth = self.nodes[node].depth + 1;
        for &r in &self.config.candidates {
            let id = self.nodes.len();
            self.nodes.push(Node {
                r,
                depth,
                parent: Some(node),
                children: Vec::new(),
                visits: 0,
                value: 0.0,
                reward: None,
                terminal: false,
            });
            self.nodes[node].children.push(id);
        }
    }

    fn simulate<S: RSimulator + ?Sized>(&mut self, node: usize, sim: &mut S) -> Result<f64> {
        let outcome = sim.evaluate(&self.path(node))?;
        if !outcome.value.is_finite() {
            return Err(Error::NonFinite("MCTS simulation value"));
        }
        let n = &mut self.nodes[node];
        n.reward = Some(outcome.value);
        n.terminal = n.depth >= self.max_depth || outcome.collided_at.is_some_and(|s| s <= n.depth);
        Ok(outcome.value)
    }

    fn backpropagate(&mut self, mut node: usize, reward: f64) {
        let gamma = self.config.gamma;
        loop {
            let n = &mut self.nodes[node];
            n.visits += 1;
            if n.depth > 0 {
                n.value += gamma.powi(n.depth as i32 - 1) * reward;
            }
            match n.parent {
                Some(p) => node = p,
                None => break,
            }
        }
    }

    fn iterate<S: RSimulator + ?Sized, R: Rng + ?Sized>(&mut self, sim: &mut S, rng: &mut R) -> Result<bool> {
        let mut node = self.descend(rng, None);
        let mut simulated = false;
        let reward = match self.nodes[node].reward {
            None => {
                simulated = true;
                self.simulate(node, sim)?
            }
            Some(r) if self.nodes[node].terminal => r,
            Some(_) => {
                self.expand(node);
                node = self.nodes[node].children[0];
                simulated = true;
                self.simulate(node, sim)?
            }
        };
        self.backpropagate(node, reward);
        Ok(simulated)
    }

    fn root_stats(&self) -> Vec<RootStat> {
        self.nodes[0]
            .children
            .iter()
            .map(|&ch| {
                let n = &self.nodes[ch];
                RootStat {
                    r: n.r,
                    visits: n.visits,
                    mean_value: if n.visits > 0 { n.value / n.visits as f64 } else { 0.0 },
                }
            })
            .collect()
    }
}

/// Run the search for a tree of at most `max_depth` levels below the root.
pub fn search<S, R>(sim: &mut S, config: &MctsConfig, max_depth: usize, rng: &mut R) -> Result<SearchResult>
where
    S: RSimulator + ?Sized,
    R: Rng + ?Sized,
{
    config.validate()?;
    let max_depth = max_depth.max(1);
    let mut tree = Tree::new(config, max_depth);
    let mut simulations = 0;
    for _ in 0..config.iterations {
        if tree.iterate(sim, rng)? {
            simulations += 1;
        }
    }
    let root_children = tree.root_stats();
    let best = root_children
        .iter()
        .max_by(|a, b| a.visits.cmp(&b.visits).then(a.r.total_cmp(&b.r)))
        .expect("root has been expanded");
    Ok(SearchResult {
        r: best.r,
        root_children,
        simulations,
    })
}
