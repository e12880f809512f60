//! Orchestration: self-play episodes, alternating generation/optimization
//! training rounds, the three inference strategies, paired augmentation and
//! sequence statistics.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluator::{Evaluator, Trainer};
use crate::image::Image;
use crate::mcts::{
    PolicyValue, SearchConfig, SearchMode, SearchTree, TerminalKind, UniformPolicy,
};
use crate::metrics::{return_r, ReturnConfig};
use crate::ops::{self, Catalog};

/// One training example: a visited root image, the episode's terminal
/// return, and the root visit distribution.
#[derive(Debug, Clone)]
pub struct Triplet {
    pub image: Arc<Image>,
    pub ret: f64,
    pub rho: Vec<f32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    pub flip_prob: f64,
    /// Uniform range of the crop area scale.
    pub crop_scale: (f64, f64),
    /// Square working resolution both images are resized to.
    pub resolution: usize,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            flip_prob: 0.5,
            crop_scale: (0.8, 1.0),
            resolution: 256,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RoundConfig {
    pub images_per_round: usize,
    pub triplets_per_tree: usize,
    pub rounds: usize,
    pub parallel_trees: usize,
    pub search: SearchConfig,
    pub train: crate::evaluator::TrainConfig,
    pub augment: AugmentConfig,
    pub return_cfg: ReturnConfig,
}

impl Default for RoundConfig {
    fn default() -> Self {
        RoundConfig {
            images_per_round: 100,
            triplets_per_tree: 10,
            rounds: 10,
            parallel_trees: 4,
            search: SearchConfig::default(),
            train: crate::evaluator::TrainConfig::default(),
            augment: AugmentConfig::default(),
            return_cfg: ReturnConfig::default(),
        }
    }
}

impl RoundConfig {
    pub fn validate(&self) -> Result<()> {
        if self.images_per_round == 0
            || self.triplets_per_tree == 0
            || self.parallel_trees == 0
        {
            return Err(Error::Config("round counts must be at least 1".into()));
        }
        self.search.validate()
    }
}

/// Per-round training log entry.
#[derive(Debug, Clone, Serialize)]
pub struct RoundLog {
    pub round: usize,
    pub episodes: usize,
    pub triplets: usize,
    pub mean_return: f64,
    pub mean_loss: f64,
}

/// Outcome of one enhancement: the image, the explainable operator
/// sequence that produces it (stop excluded) and a value estimate after
/// each step.
#[derive(Debug, Clone)]
pub struct EnhanceResult {
    pub image: Image,
    pub sequence: Vec<u16>,
    pub per_step_values: Vec<f64>,
}

fn mix_seed(master: u64, a: u64, b: u64) -> u64 {
    let mut z = master ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Identical random flip and crop applied to both images of a pair, then
/// both are resized to the configured square resolution.
pub fn augment(input: &Image, target: &Image, cfg: &AugmentConfig, seed: u64) -> Result<(Image, Image)> {
    input.check_same_dims(target, "augment pair")?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let flip = rng.random::<f64>() < cfg.flip_prob;
    let (lo, hi) = cfg.crop_scale;
    if !(0.0 < lo && lo <= hi && hi <= 1.0) {
        return Err(Error::Config(format!(
            "crop scale range ({lo}, {hi}) must satisfy 0 < lo <= hi <= 1"
        )));
    }
    let scale = if lo == hi { lo } else { rng.random_range(lo..=hi) };
    let (h, w) = input.dims();
    let side = scale.sqrt();
    let ch = ((h as f64 * side).round() as usize).clamp(1, h);
    let cw = ((w as f64 * side).round() as usize).clamp(1, w);
    let top = if h > ch { rng.random_range(0..=h - ch) } else { 0 };
    let left = if w > cw { rng.random_range(0..=w - cw) } else { 0 };

    let transform = |img: &Image| -> Result<Image> {
        let mut out = img.crop(top, left, ch, cw)?;
        if flip {
            out = out.flip_horizontal();
        }
        out.resize(cfg.resolution, cfg.resolution)
    };
    Ok((transform(input)?, transform(target)?))
}

fn sample_index(weights: &[f32], rng: &mut ChaCha8Rng) -> usize {
    let total: f64 = weights.iter().map(|&w| w as f64).sum();
    let mut u = rng.random::<f64>() * total;
    let mut last_positive = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            last_positive = i;
            u -= w as f64;
            if u <= 0.0 {
                return i;
            }
        }
    }
    last_positive
}

fn argmax_f32(values: &[f32]) -> usize {
    let mut best = 0;
    let mut best_v = f32::NEG_INFINITY;
    for (i, &v) in values.iter().enumerate() {
        if v > best_v {
            best_v = v;
            best = i;
        }
    }
    best
}

/// One training episode: repeated search and sampled root advances until
/// stop or the depth cap. Returns up to `triplets_per_tree` triplets, all
/// carrying the episode's terminal return.
pub fn run_episode(
    input: &Image,
    target: &Image,
    evaluator: &dyn PolicyValue,
    catalog: &Catalog,
    cfg: &RoundConfig,
    seed: u64,
) -> Result<(Vec<Triplet>, f64)> {
    let mut search_cfg = cfg.search;
    search_cfg.mode = SearchMode::Train;
    search_cfg.seed = seed;
    let mut tree = SearchTree::new(input.clone(), catalog, search_cfg, cfg.return_cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0x5EED, 0));
    let mut remaining = search_cfg.episode_cap;
    let mut records: Vec<(Arc<Image>, Vec<f32>)> = Vec::new();

    let terminal_return = loop {
        let iters = search_cfg.iterations.min(remaining);
        if iters > 0 {
            tree.run(iters, evaluator, Some(target))?;
            remaining -= iters;
        }
        let rho = loop {
            match tree.root_policy() {
                Ok(rho) => break Some(rho),
                Err(_) if remaining > 0 => {
                    tree.run(1, evaluator, Some(target))?;
                    remaining -= 1;
                }
                Err(_) => break None,
            }
        };
        // Out of budget with no usable visit counts: the episode never
        // reached stop, which counts as a failed search.
        let Some(rho) = rho else { break 0.0 };
        let root_image = tree.root().image().expect("root materialized").clone();
        records.push((root_image, rho.clone()));
        let action = sample_index(&rho, &mut rng) as u16;
        match tree.advance(action)? {
            TerminalKind::Stopped => {
                let stopped = tree.root().image().expect("stop carries image");
                break return_r(stopped, target, &cfg.return_cfg)?;
            }
            TerminalKind::DepthExceeded => break 0.0,
            TerminalKind::None => {}
        }
    };

    let keep = subsample_indices(records.len(), cfg.triplets_per_tree, &mut rng);
    let triplets = keep
        .into_iter()
        .map(|i| {
            let (image, rho) = records[i].clone();
            Triplet {
                image,
                ret: terminal_return,
                rho,
            }
        })
        .collect();
    Ok((triplets, terminal_return))
}

/// Uniform subsample without replacement; indices returned in ascending
/// order so triplets keep their chronological order.
fn subsample_indices(n: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if n <= k {
        return (0..n).collect();
    }
    let mut indices: Vec<usize> = (0..n).collect();
    for i in 0..k {
        let j = rng.random_range(i..n);
        indices.swap(i, j);
    }
    let mut chosen = indices[..k].to_vec();
    chosen.sort_unstable();
    chosen
}

/// Alternating generation/optimization rounds. Deterministic under the
/// configured seeds: episode work items are pre-assigned and merged in
/// index order regardless of worker scheduling.
pub fn train(
    dataset: &[(Image, Image)],
    catalog: &Catalog,
    mut evaluator: Evaluator,
    cfg: &RoundConfig,
) -> Result<(Evaluator, Vec<RoundLog>)> {
    if dataset.is_empty() {
        return Err(Error::Dataset("no pairs found".into()));
    }
    cfg.validate()?;
    evaluator.validate_catalog(catalog)?;
    let mut logs = Vec::with_capacity(cfg.rounds);
    let mut trainer = Trainer::new(cfg.train, &evaluator);
    let master = cfg.search.seed;

    for round in 0..cfg.rounds {
        // ---- generation ----
        let mut order_rng = ChaCha8Rng::seed_from_u64(mix_seed(master, round as u64, 0xDA7A));
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        for i in (1..order.len()).rev() {
            let j = order_rng.random_range(0..=i);
            order.swap(i, j);
        }
        let selected: Vec<usize> = (0..cfg.images_per_round)
            .map(|i| order[i % order.len()])
            .collect();

        let episodes: Vec<EpisodeItem> = selected
            .iter()
            .enumerate()
            .map(|(slot, &pair)| EpisodeItem {
                pair,
                aug_seed: mix_seed(master, round as u64, 2 * slot as u64 + 1),
                ep_seed: mix_seed(master, round as u64, 2 * slot as u64 + 2),
            })
            .collect();

        let results = run_episodes_parallel(dataset, catalog, &evaluator, cfg, &episodes)?;

        let mut triplets: Vec<Triplet> = Vec::new();
        let mut return_sum = 0.0;
        for (eps_triplets, ret) in &results {
            triplets.extend(eps_triplets.iter().cloned());
            return_sum += ret;
        }
        let mean_return = return_sum / results.len() as f64;

        // ---- optimization ----
        if triplets.is_empty() {
            return Err(Error::Search(
                "no triplets collected; increase the episode iteration budget".into(),
            ));
        }
        let mut batch_rng = ChaCha8Rng::seed_from_u64(mix_seed(master, round as u64, 0xBA7C));
        let mut loss_sum = 0.0;
        for _ in 0..cfg.train.steps_per_round {
            let batch: Vec<Triplet> = (0..cfg.train.batch_size)
                .map(|_| triplets[batch_rng.random_range(0..triplets.len())].clone())
                .collect();
            loss_sum += trainer.train_step(&mut evaluator, &batch)?;
        }
        let mean_loss = loss_sum / cfg.train.steps_per_round.max(1) as f64;

        logs.push(RoundLog {
            round,
            episodes: results.len(),
            triplets: triplets.len(),
            mean_return,
            mean_loss,
        });
        log::info!(
            "round {round}: episodes {} triplets {} mean_return {mean_return:.4} mean_loss {mean_loss:.4}",
            results.len(),
            triplets.len()
        );
    }
    Ok((evaluator, logs))
}

struct EpisodeItem {
    pair: usize,
    aug_seed: u64,
    ep_seed: u64,
}

fn run_episodes_parallel(
    dataset: &[(Image, Image)],
    catalog: &Catalog,
    evaluator: &Evaluator,
    cfg: &RoundConfig,
    episodes: &[EpisodeItem],
) -> Result<Vec<(Vec<Triplet>, f64)>> {
    let n = episodes.len();
    let mut results: Vec<Option<Result<(Vec<Triplet>, f64)>>> = (0..n).map(|_| None).collect();
    let run_one = |item: &EpisodeItem| -> Result<(Vec<Triplet>, f64)> {
        let (input, target) = &dataset[item.pair];
        let (input, target) = augment(input, target, &cfg.augment, item.aug_seed)?;
        run_episode(&input, &target, evaluator, catalog, cfg, item.ep_seed)
    };
    for start in (0..n).step_by(cfg.parallel_trees) {
        let end = (start + cfg.parallel_trees).min(n);
        if end - start == 1 {
            results[start] = Some(run_one(&episodes[start]));
            continue;
        }
        let chunk: Vec<Result<(Vec<Triplet>, f64)>> = std::thread::scope(|scope| {
            let handles: Vec<_> = episodes[start..end]
                .iter()
                .map(|item| scope.spawn(|| run_one(item)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("episode worker panicked"))
                .collect()
        });
        for (slot, res) in chunk.into_iter().enumerate() {
            results[start + slot] = Some(res);
        }
    }
    results
        .into_iter()
        .map(|r| r.expect("all episodes assigned"))
        .collect()
}

/// Tree-search inference: grow one tree of `cfg.iterations` nodes without a
/// target, then descend by most-visited child until stop or the depth cap.
pub fn infer_tree(
    input: &Image,
    evaluator: &dyn PolicyValue,
    catalog: &Catalog,
    cfg: &SearchConfig,
) -> Result<EnhanceResult> {
    let mut search_cfg = *cfg;
    search_cfg.mode = SearchMode::Infer;
    let mut tree = SearchTree::new(input.clone(), catalog, search_cfg, ReturnConfig::default())?;
    tree.run(search_cfg.iterations, evaluator, None)?;

    let mut sequence = Vec::new();
    let mut values = Vec::new();
    let mut node = tree.root();
    loop {
        if node.terminal() != TerminalKind::None || !node.is_expanded() {
            break;
        }
        let visited: u64 = node.children().iter().map(|c| c.visits()).sum();
        if visited == 0 {
            break;
        }
        let (idx, child) = node
            .children()
            .iter()
            .enumerate()
            .max_by(|(ia, a), (ib, b)| {
                a.visits()
                    .cmp(&b.visits())
                    .then_with(|| ib.cmp(ia)) // prefer the lowest id on ties
            })
            .expect("expanded node has children");
        if idx as u16 == catalog.stop_id() {
            break;
        }
        sequence.push(idx as u16);
        values.push(child.mean_return());
        node = child;
    }

    let image = ops::apply_sequence(catalog, &sequence, input)?;
    Ok(EnhanceResult {
        image,
        sequence,
        per_step_values: values,
    })
}

/// Policy-based inference: repeatedly apply the operation that maximizes
/// the network policy until stop wins or `max_steps` operations were
/// applied.
pub fn infer_policy(
    input: &Image,
    evaluator: &dyn PolicyValue,
    catalog: &Catalog,
    max_steps: usize,
) -> Result<EnhanceResult> {
    let mut current = input.clone();
    let mut sequence = Vec::new();
    let mut values = Vec::new();
    let mut out = evaluator.evaluate(&current)?;
    for _ in 0..max_steps {
        let action = argmax_f32(&out.priors) as u16;
        if action == catalog.stop_id() {
            break;
        }
        current = ops::apply(catalog.get(action)?, &current)?;
        sequence.push(action);
        out = evaluator.evaluate(&current)?;
        values.push(out.value as f64);
    }
    Ok(EnhanceResult {
        image: current,
        sequence,
        per_step_values: values,
    })
}

/// Guided search: training-style search with terminal returns against a
/// known target and no noise; the root advances by argmax of the visit
/// distribution and the best stopped sequence seen anywhere is returned.
/// Without an evaluator, priors are uniform and leaf values 0.5.
pub fn infer_guided(
    input: &Image,
    target: &Image,
    evaluator: Option<&dyn PolicyValue>,
    catalog: &Catalog,
    cfg: &SearchConfig,
    return_cfg: &ReturnConfig,
) -> Result<EnhanceResult> {
    input.check_same_dims(target, "guided input/target")?;
    let uniform = UniformPolicy {
        actions: catalog.len(),
    };
    let evaluator: &dyn PolicyValue = evaluator.unwrap_or(&uniform);

    let mut search_cfg = *cfg;
    search_cfg.mode = SearchMode::Guided;
    let mut tree = SearchTree::new(input.clone(), catalog, search_cfg, *return_cfg)?;
    // Doing nothing is always an available terminal: seed the candidate set
    // with the empty sequence.
    tree.record_candidate(return_r(input, target, return_cfg)?, Vec::new());

    let mut remaining = search_cfg.episode_cap;
    loop {
        let iters = search_cfg.iterations.min(remaining);
        if iters > 0 {
            tree.run(iters, evaluator, Some(target))?;
            remaining -= iters;
        }
        let Ok(rho) = tree.root_policy() else {
            break;
        };
        let action = argmax_f32(&rho) as u16;
        if tree.advance(action)? != TerminalKind::None {
            break;
        }
        if remaining == 0 && !tree.root().is_expanded() {
            break;
        }
    }

    let (_, best_seq) = tree.best_terminal().expect("seeded with empty sequence");
    let sequence = best_seq.to_vec();
    let mut values = Vec::with_capacity(sequence.len());
    let mut current = input.clone();
    for &id in &sequence {
        current = ops::apply(catalog.get(id)?, &current)?;
        values.push(return_r(&current, target, return_cfg)?);
    }
    Ok(EnhanceResult {
        image: current,
        sequence,
        per_step_values: values,
    })
}

/// Histogram of operation usage over a set of results.
#[derive(Debug, Clone, Serialize)]
pub struct SequenceStats {
    pub counts: Vec<u64>,
    pub frequencies: Vec<f64>,
}

pub fn sequence_stats(results: &[EnhanceResult], catalog: &Catalog) -> SequenceStats {
    let mut counts = vec![0u64; catalog.len()];
    for r in results {
        for &id in &r.sequence {
            if let Some(c) = counts.get_mut(id as usize) {
                *c += 1;
            }
        }
    }
    let total: u64 = counts.iter().sum();
    let frequencies = counts
        .iter()
        .map(|&c| if total == 0 { 0.0 } else { c as f64 / total as f64 })
        .collect();
    SequenceStats {
        counts,
        frequencies,
    }
}

impl SequenceStats {
    pub fn to_csv(&self, catalog: &Catalog) -> String {
        let mut out = String::from("id,family,channel,param,count,frequency\n");
        for (op, (&count, &freq)) in catalog
            .ops
            .iter()
            .zip(self.counts.iter().zip(&self.frequencies))
        {
            out.push_str(&format!(
                "{},{:?},{:?},{},{},{}\n",
                op.id, op.family, op.channel, op.param, count, freq
            ));
        }
        out
    }
}
