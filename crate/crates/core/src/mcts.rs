//! Monte Carlo Tree Search over sequences of editing operations.
//!
//! Selection maximizes an upper confidence bound, expansion attaches one
//! child per catalog action, evaluation uses the policy-value function or a
//! terminal rule, and the return is backed up to the root. A search can be
//! advanced action by action, keeping the chosen subtree.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::metrics::{return_r, ReturnConfig};
use crate::ops::{self, Catalog};

/// Output of a policy-value function: priors over the catalog and a scalar
/// value estimate in (0, 1).
#[derive(Debug, Clone)]
pub struct PolicyValueOutput {
    pub priors: Vec<f32>,
    pub value: f32,
}

/// Anything that can score an image: the trained evaluator, or the uniform
/// fallback used by pure search.
pub trait PolicyValue: Sync {
    fn evaluate(&self, image: &Image) -> Result<PolicyValueOutput>;
}

/// Uniform priors and a constant value of 0.5; makes guided search usable
/// before any training.
pub struct UniformPolicy {
    pub actions: usize,
}

impl PolicyValue for UniformPolicy {
    fn evaluate(&self, _image: &Image) -> Result<PolicyValueOutput> {
        Ok(PolicyValueOutput {
            priors: vec![1.0 / self.actions as f32; self.actions],
            value: 0.5,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchMode {
    /// Terminal returns against the target, Dirichlet noise at the root.
    Train,
    /// Terminal returns estimated by the value head, no noise.
    Infer,
    /// Terminal returns against the target, no noise.
    Guided,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearchConfig {
    /// Exploration coefficient of the confidence bound.
    pub c: f64,
    /// Maximum node depth, counted in operations (stop included) from the
    /// episode's original image.
    pub max_depth: u32,
    /// Search iterations per root move.
    pub iterations: u32,
    /// Total iteration budget for a whole episode of root advances.
    pub episode_cap: u32,
    pub dirichlet_epsilon: f32,
    pub dirichlet_alpha: f64,
    pub seed: u64,
    pub mode: SearchMode,
    /// Keep the chosen child's subtree when advancing the root.
    pub reuse_tree: bool,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            c: 10.0,
            max_depth: 10,
            iterations: 1000,
            episode_cap: 10_000,
            dirichlet_epsilon: 0.25,
            dirichlet_alpha: 0.3,
            seed: 0,
            mode: SearchMode::Train,
            reuse_tree: true,
        }
    }
}

impl SearchConfig {
    pub fn with_mode(mode: SearchMode) -> SearchConfig {
        SearchConfig {
            mode,
            ..SearchConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.c < 0.0 || !self.c.is_finite() {
            return Err(Error::Config("exploration coefficient must be >= 0".into()));
        }
        if self.max_depth == 0 {
            return Err(Error::Config("max_depth must be at least 1".into()));
        }
        if self.iterations == 0 || self.episode_cap == 0 {
            return Err(Error::Config("iteration budgets must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.dirichlet_epsilon) {
            return Err(Error::Config("dirichlet_epsilon must be in [0, 1]".into()));
        }
        if !(self.dirichlet_alpha > 0.0) {
            return Err(Error::Config("dirichlet_alpha must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminalKind {
    None,
    Stopped,
    DepthExceeded,
}

/// Search-tree vertex. Children are ordered by catalog id, so the child
/// index equals the operation id. Images of unvisited children are
/// materialized lazily on first evaluation.
#[derive(Debug)]
pub struct Node {
    image: Option<Arc<Image>>,
    visits: u64,
    total_return: f64,
    prior: f32,
    action: Option<u16>,
    depth: u32,
    terminal: TerminalKind,
    children: Vec<Node>,
    /// Times this node itself was the evaluated leaf (instrumentation).
    self_evals: u64,
}

impl Node {
    fn new_root(image: Arc<Image>, depth: u32) -> Node {
        Node {
            image: Some(image),
            visits: 0,
            total_return: 0.0,
            prior: 1.0,
            action: None,
            depth,
            terminal: TerminalKind::None,
            children: Vec::new(),
            self_evals: 0,
        }
    }

    /// Average backed-up return; 0 while unvisited.
    pub fn mean_return(&self) -> f64 {
        self.total_return / (self.visits.max(1)) as f64
    }

    pub fn visits(&self) -> u64 {
        self.visits
    }

    pub fn total_return(&self) -> f64 {
        self.total_return
    }

    pub fn prior(&self) -> f32 {
        self.prior
    }

    pub fn action(&self) -> Option<u16> {
        self.action
    }

    pub fn depth(&self) -> u32 {
        self.depth
    }

    pub fn terminal(&self) -> TerminalKind {
        self.terminal
    }

    pub fn children(&self) -> &[Node] {
        &self.children
    }

    pub fn is_expanded(&self) -> bool {
        !self.children.is_empty()
    }

    pub fn image(&self) -> Option<&Arc<Image>> {
        self.image.as_ref()
    }

    pub fn self_evals(&self) -> u64 {
        self.self_evals
    }

    fn node_count(&self) -> usize {
        1 + self.children.iter().map(Node::node_count).sum::<usize>()
    }
}

/// Upper confidence bound of a child under its parent.
pub fn ucb(child: &Node, parent: &Node, c: f64) -> f64 {
    ucb_score(child, parent.visits, c)
}

fn ucb_score(child: &Node, parent_visits: u64, c: f64) -> f64 {
    child.mean_return()
        + c * child.prior as f64 * (parent_visits as f64).sqrt() / (child.visits as f64 + 1.0)
}

#[derive(Debug, Default, Clone)]
pub struct SearchStats {
    pub iterations: u64,
    pub evaluator_calls: u64,
    pub expansions: u64,
}

/// One search over one image, reusable across root advances.
pub struct SearchTree<'a> {
    root: Node,
    catalog: &'a Catalog,
    cfg: SearchConfig,
    return_cfg: ReturnConfig,
    rng: ChaCha8Rng,
    episode_actions: Vec<u16>,
    best: Option<(f64, Vec<u16>)>,
    pub stats: SearchStats,
}

impl<'a> SearchTree<'a> {
    pub fn new(
        image: Image,
        catalog: &'a Catalog,
        cfg: SearchConfig,
        return_cfg: ReturnConfig,
    ) -> Result<SearchTree<'a>> {
        cfg.validate()?;
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        Ok(SearchTree {
            root: Node::new_root(Arc::new(image), 0),
            catalog,
            cfg,
            return_cfg,
            rng,
            episode_actions: Vec::new(),
            best: None,
            stats: SearchStats::default(),
        })
    }

    pub fn root(&self) -> &Node {
        &self.root
    }

    pub fn config(&self) -> &SearchConfig {
        &self.cfg
    }

    /// Actions taken by root advances since the episode started.
    pub fn episode_actions(&self) -> &[u16] {
        &self.episode_actions
    }

    /// Best stopped-terminal return seen so far and the editing sequence
    /// (stop excluded) that reaches it, relative to the episode start.
    pub fn best_terminal(&self) -> Option<(f64, &[u16])> {
        self.best.as_ref().map(|(r, seq)| (*r, seq.as_slice()))
    }

    /// Seed best-terminal tracking with a known sequence (e.g. the empty
    /// sequence in guided search, where doing nothing is always available).
    pub fn record_candidate(&mut self, ret: f64, sequence: Vec<u16>) {
        if self.best.as_ref().is_none_or(|(best, _)| ret > *best) {
            self.best = Some((ret, sequence));
        }
    }

    pub fn node_count(&self) -> usize {
        self.root.node_count()
    }

    /// Run search iterations from the current root.
    pub fn run(
        &mut self,
        iterations: u32,
        evaluator: &dyn PolicyValue,
        target: Option<&Image>,
    ) -> Result<()> {
        let mut noise_done = false;
        if self.cfg.mode == SearchMode::Train && self.root.is_expanded() {
            self.mix_root_noise();
            noise_done = true;
        }
        for _ in 0..iterations {
            let path = self.select_path();
            let (ret, expanded_root) = self.evaluate_leaf(&path, evaluator, target)?;
            if expanded_root && self.cfg.mode == SearchMode::Train && !noise_done {
                self.mix_root_noise();
                noise_done = true;
            }
            self.backup(&path, ret);
            self.stats.iterations += 1;
        }
        Ok(())
    }

    /// Visit distribution over the root's children.
    pub fn root_policy(&self) -> Result<Vec<f32>> {
        root_policy(&self.root)
    }

    /// Make `action`'s child the new root, keeping its subtree statistics
    /// (unless tree reuse is disabled) and discarding all siblings.
    pub fn advance(&mut self, action: u16) -> Result<TerminalKind> {
        if !self.root.is_expanded() {
            return Err(Error::Search(format!(
                "cannot advance into action {action}: root not expanded"
            )));
        }
        let idx = action as usize;
        if idx >= self.root.children.len() {
            return Err(Error::Search(format!(
                "action {action} outside the catalog of {} operations",
                self.root.children.len()
            )));
        }
        self.materialize_child_image(idx)?;
        let mut child = self.root.children.swap_remove(idx);
        if !self.cfg.reuse_tree {
            child.children.clear();
            child.visits = 0;
            child.total_return = 0.0;
            child.self_evals = 0;
        }
        self.episode_actions.push(action);
        self.root = child;
        Ok(self.root.terminal)
    }

    fn node(&self, path: &[usize]) -> &Node {
        let mut n = &self.root;
        for &i in path {
            n = &n.children[i];
        }
        n
    }

    fn node_mut(&mut self, path: &[usize]) -> &mut Node {
        let mut n = &mut self.root;
        for &i in path {
            n = &mut n.children[i];
        }
        n
    }

    /// Descend by argmax-UCB until an unexpanded or terminal node; ties go
    /// to the lowest catalog id.
    fn select_path(&self) -> Vec<usize> {
        let mut path = Vec::new();
        let mut node = &self.root;
        while node.terminal == TerminalKind::None && node.is_expanded() {
            let mut best = 0usize;
            let mut best_score = f64::NEG_INFINITY;
            for (i, child) in node.children.iter().enumerate() {
                let score = ucb_score(child, node.visits, self.cfg.c);
                if score > best_score {
                    best_score = score;
                    best = i;
                }
            }
            path.push(best);
            node = &node.children[best];
        }
        path
    }

    fn materialize_child_image(&mut self, idx: usize) -> Result<()> {
        if self.root.children[idx].image.is_some() {
            return Ok(());
        }
        let parent_image = self.root.image.clone().expect("root image present");
        let op = self.catalog.get(idx as u16)?;
        let img = ops::apply(op, &parent_image)?;
        self.root.children[idx].image = Some(Arc::new(img));
        Ok(())
    }

    fn ensure_leaf_image(&mut self, path: &[usize]) -> Result<Arc<Image>> {
        if let Some(img) = &self.node(path).image {
            return Ok(img.clone());
        }
        let parent_path = &path[..path.len() - 1];
        let parent_image = self
            .node(parent_path)
            .image
            .clone()
            .expect("expanded parent has a materialized image");
        let action = self.node(path).action.expect("non-root node");
        let op = self.catalog.get(action)?;
        let img = Arc::new(ops::apply(op, &parent_image)?);
        self.node_mut(path).image = Some(img.clone());
        Ok(img)
    }

    /// Evaluate the selected leaf, expanding it when it is not terminal.
    /// Returns the leaf return and whether the root itself was expanded.
    fn evaluate_leaf(
        &mut self,
        path: &[usize],
        evaluator: &dyn PolicyValue,
        target: Option<&Image>,
    ) -> Result<(f64, bool)> {
        match self.node(path).terminal {
            TerminalKind::DepthExceeded => {
                self.node_mut(path).self_evals += 1;
                Ok((0.0, false))
            }
            TerminalKind::Stopped => {
                let image = self.ensure_leaf_image(path)?;
                let ret = match self.cfg.mode {
                    SearchMode::Train | SearchMode::Guided => {
                        let target = target.ok_or_else(|| {
                            Error::Search("target image required for terminal returns".into())
                        })?;
                        return_r(&image, target, &self.return_cfg)?
                    }
                    SearchMode::Infer => {
                        self.stats.evaluator_calls += 1;
                        evaluator.evaluate(&image)?.value as f64
                    }
                };
                if self.cfg.mode != SearchMode::Infer {
                    let mut sequence = self.episode_actions.clone();
                    sequence.extend(path.iter().map(|&i| i as u16));
                    if sequence.last() == Some(&self.catalog.stop_id()) {
                        sequence.pop();
                    }
                    self.record_candidate(ret, sequence);
                }
                self.node_mut(path).self_evals += 1;
                Ok((ret, false))
            }
            TerminalKind::None => {
                let image = self.ensure_leaf_image(path)?;
                let out = evaluator.evaluate(&image)?;
                self.stats.evaluator_calls += 1;
                if out.priors.len() != self.catalog.len() {
                    return Err(Error::ShapeMismatch(format!(
                        "policy length {} vs catalog size {}",
                        out.priors.len(),
                        self.catalog.len()
                    )));
                }
                let child_depth = self.node(path).depth + 1;
                let children: Vec<Node> = self
                    .catalog
                    .ops
                    .iter()
                    .map(|op| Node {
                        image: if op.terminal {
                            Some(image.clone())
                        } else {
                            None
                        },
                        visits: 0,
                        total_return: 0.0,
                        prior: out.priors[op.id as usize],
                        action: Some(op.id),
                        depth: child_depth,
                        terminal: if op.terminal {
                            TerminalKind::Stopped
                        } else if child_depth >= self.cfg.max_depth {
                            TerminalKind::DepthExceeded
                        } else {
                            TerminalKind::None
                        },
                        children: Vec::new(),
                        self_evals: 0,
                    })
                    .collect();
                let leaf = self.node_mut(path);
                leaf.children = children;
                leaf.self_evals += 1;
                self.stats.expansions += 1;
                Ok((out.value as f64, path.is_empty()))
            }
        }
    }

    fn backup(&mut self, path: &[usize], ret: f64) {
        debug_assert!((0.0..=1.0).contains(&ret), "return {ret} outside [0, 1]");
        let mut node = &mut self.root;
        node.visits += 1;
        node.total_return += ret;
        for &i in path {
            node = &mut node.children[i];
            node.visits += 1;
            node.total_return += ret;
        }
    }

    /// Mix Dirichlet noise into the root children's priors:
    /// `prior' = (1 - eps) * prior + eps * d`.
    fn mix_root_noise(&mut self) {
        let eps = self.cfg.dirichlet_epsilon;
        if eps <= 0.0 || self.root.children.is_empty() {
            return;
        }
        let gamma = Gamma::new(self.cfg.dirichlet_alpha, 1.0).expect("validated alpha");
        let draws: Vec<f64> = self
            .root
            .children
            .iter()
            .map(|_| gamma.sample(&mut self.rng))
            .collect();
        let sum: f64 = draws.iter().sum();
        if !(sum.is_finite() && sum > 0.0) {
            return;
        }
        for (child, d) in self.root.children.iter_mut().zip(draws) {
            child.prior = (1.0 - eps) * child.prior + eps * (d / sum) as f32;
        }
    }

    /// Flat JSON dump of the tree for debugging and sweep tooling.
    pub fn dump_json(&self) -> serde_json::Value {
        let mut nodes = Vec::new();
        let mut queue = std::collections::VecDeque::new();
        queue.push_back((&self.root, None::<usize>));
        while let Some((node, parent)) = queue.pop_front() {
            let id = nodes.len();
            nodes.push(serde_json::json!({
                "id": id,
                "parent": parent,
                "action": node.action,
                "n": node.visits,
                "w": node.total_return,
                "prior": node.prior,
                "depth": node.depth,
                "terminal": node.terminal,
            }));
            for child in &node.children {
                queue.push_back((child, Some(id)));
            }
        }
        serde_json::json!({ "nodes": nodes })
    }
}

/// Visit distribution over an expanded root's children, normalized over the
/// children sum so it is a proper distribution.
pub fn root_policy(root: &Node) -> Result<Vec<f32>> {
    let total: u64 = root.children.iter().map(|c| c.visits).sum();
    if total == 0 {
        return Err(Error::Search(
            "root policy undefined: no child visits".into(),
        ));
    }
    Ok(root
        .children
        .iter()
        .map(|c| c.visits as f64 / total as f64)
        .map(|p| p as f32)
        .collect())
}

/// Grow a fresh tree for `cfg.iterations` iterations and return it together
/// with the root policy.
pub fn run_search<'a>(
    root_image: Image,
    catalog: &'a Catalog,
    evaluator: &dyn PolicyValue,
    target: Option<&Image>,
    cfg: SearchConfig,
    return_cfg: ReturnConfig,
) -> Result<(SearchTree<'a>, Vec<f32>)> {
    let mut tree = SearchTree::new(root_image, catalog, cfg, return_cfg)?;
    tree.run(cfg.iterations, evaluator, target)?;
    let rho = tree.root_policy()?;
    Ok((tree, rho))
}
