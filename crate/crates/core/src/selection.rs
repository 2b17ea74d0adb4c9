//! Experience-buffer selection.
//!
//! Every strategy works on a candidate set (the training vertices of one
//! task) and measures hop distances on the graph it is given, which for
//! replay is the accumulated graph at the time the task is current.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::IndexedRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gnn::EmbeddingTable;
use crate::graph::{Graph, VertexId, INF};
use crate::rng::{rng_from, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Farthest-first traversal for the k-center objective.
    KcenterGreedy,
    /// Farthest-first with the next center sampled proportionally to distance.
    KcenterSampling,
    /// Sampled proportionally to degree times distance.
    DegreeDistance,
    Random,
    TopDegree,
    /// Vertices nearest their class-mean embedding.
    Representation,
}

impl Strategy {
    pub const ALL: [Strategy; 6] = [
        Strategy::KcenterGreedy,
        Strategy::KcenterSampling,
        Strategy::DegreeDistance,
        Strategy::Random,
        Strategy::TopDegree,
        Strategy::Representation,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::KcenterGreedy => "kcenter_greedy",
            Strategy::KcenterSampling => "kcenter_sampling",
            Strategy::DegreeDistance => "degree_distance",
            Strategy::Random => "random",
            Strategy::TopDegree => "top_degree",
            Strategy::Representation => "representation",
        }
    }

    pub fn needs_embeddings(self) -> bool {
        self == Strategy::Representation
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown selection strategy `{s}`")))
    }
}

/// One task's replay set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BufferEntry {
    pub task: usize,
    pub budget: usize,
    pub vertices: Vec<VertexId>,
}

/// Per-task replay sets `P_1, P_2, ...`, pairwise disjoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperienceBuffer {
    pub strategy: Strategy,
    pub seed: u64,
    entries: Vec<BufferEntry>,
}

impl ExperienceBuffer {
    pub fn new(strategy: Strategy, seed: u64) -> Self {
        ExperienceBuffer { strategy, seed, entries: Vec::new() }
    }

    pub fn entries(&self) -> &[BufferEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.iter().map(|e| e.vertices.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Stores the set for `task`; tasks must arrive in increasing order and
    /// the set must not overlap earlier ones.
    pub fn push(&mut self, task: usize, budget: usize, vertices: Vec<VertexId>) -> Result<()> {
        if self.entries.last().is_some_and(|e| e.task >= task) {
            return Err(Error::invalid(format!("buffer entry for task {task} is out of order")));
        }
        if vertices.len() > budget {
            return Err(Error::invalid(format!(
                "{} vertices exceed the budget {budget}",
                vertices.len()
            )));
        }
        for e in &self.entries {
            if let Some(v) = vertices.iter().find(|v| e.vertices.contains(v)) {
                return Err(Error::invalid(format!("vertex {v} is already buffered for task {}", e.task)));
            }
        }
        self.entries.push(BufferEntry { task, budget, vertices });
        Ok(())
    }
}

/// Splits `b` over the classes present in `labels` as evenly as possible.
///
/// Classes are visited in ascending id order, one unit at a time, so any
/// remainder goes to the lowest ids. A class never receives more than it
/// has candidates; the surplus moves on to the classes that still have room.
pub fn stratify_by_class(labels: &[usize], b: usize) -> Result<BTreeMap<usize, usize>> {
    let mut sizes: BTreeMap<usize, usize> = BTreeMap::new();
    for &c in labels {
        *sizes.entry(c).or_default() += 1;
    }
    if b < sizes.len() {
        return Err(Error::invalid(format!(
            "budget {b} cannot cover the {} classes present",
            sizes.len()
        )));
    }
    let mut budgets: BTreeMap<usize, usize> = sizes.keys().map(|&c| (c, 0)).collect();
    let mut left = b.min(labels.len());
    while left > 0 {
        for (c, given) in budgets.iter_mut() {
            if left > 0 && *given < sizes[c] {
                *given += 1;
                left -= 1;
            }
        }
    }
    Ok(budgets)
}

/// Candidate pool shared by the selection loops.
struct Pool<'a> {
    g: &'a Graph,
    ids: Vec<VertexId>,
    local: Vec<usize>,
    class: Vec<usize>,
    /// Remaining per-class budget, indexed by dense class index.
    quota: Option<Vec<usize>>,
    taken: Vec<bool>,
    dist: Vec<u32>,
    order: Vec<VertexId>,
}

impl<'a> Pool<'a> {
    fn new(g: &'a Graph, candidates: &[VertexId], labels: Option<&[usize]>) -> Result<Self> {
        if candidates.is_empty() {
            return Err(Error::invalid("candidate set is empty"));
        }
        if let Some(l) = labels {
            if l.len() != candidates.len() {
                return Err(Error::invalid("labels must align with candidates"));
            }
        }
        let mut pairs: Vec<(VertexId, usize)> = candidates
            .iter()
            .enumerate()
            .map(|(i, &v)| (v, labels.map_or(0, |l| l[i])))
            .collect();
        pairs.sort_unstable();
        if let Some(w) = pairs.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(Error::invalid(format!("duplicate candidate {}", w[0].0)));
        }
        let local = pairs.iter().map(|&(v, _)| g.require_local(v)).collect::<Result<Vec<_>>>()?;
        Ok(Pool {
            g,
            ids: pairs.iter().map(|p| p.0).collect(),
            local,
            class: pairs.iter().map(|p| p.1).collect(),
            quota: None,
            taken: vec![false; pairs.len()],
            dist: vec![INF; g.num_vertices()],
            order: Vec::new(),
        })
    }

    /// Caps each class at its share of `b`; class labels are remapped to
    /// dense indices first.
    fn stratify(&mut self, b: usize) -> Result<()> {
        let budgets = stratify_by_class(&self.class, b)?;
        let index: BTreeMap<usize, usize> = budgets.keys().enumerate().map(|(i, &c)| (c, i)).collect();
        for c in &mut self.class {
            *c = index[c];
        }
        self.quota = Some(budgets.into_values().collect());
        Ok(())
    }

    fn len(&self) -> usize {
        self.ids.len()
    }

    fn eligible(&self, k: usize) -> bool {
        !self.taken[k] && self.quota.as_ref().is_none_or(|q| q[self.class[k]] > 0)
    }

    fn take(&mut self, k: usize) {
        debug_assert!(self.eligible(k));
        self.taken[k] = true;
        if let Some(q) = &mut self.quota {
            q[self.class[k]] -= 1;
        }
        self.g.relax_from(self.local[k], &mut self.dist);
        self.order.push(self.ids[k]);
    }

    fn degree(&self, k: usize) -> u64 {
        self.g.degree_local(self.local[k]) as u64
    }

    /// Hop distance to the current selection per candidate, zero for
    /// ineligible ones. Unreachable candidates get one more than the largest
    /// finite distance among eligible candidates, so they keep positive mass.
    fn capped_distances(&self) -> Vec<u64> {
        let max_finite = (0..self.len())
            .filter(|&k| self.eligible(k))
            .map(|k| self.dist[self.local[k]])
            .filter(|&d| d != INF)
            .max()
            .unwrap_or(0) as u64;
        (0..self.len())
            .map(|k| match self.dist[self.local[k]] {
                _ if !self.eligible(k) => 0,
                INF => max_finite + 1,
                d => d as u64,
            })
            .collect()
    }

    /// Highest-degree eligible candidate, ties to the smallest id.
    fn max_degree(&self) -> Option<usize> {
        let mut best: Option<usize> = None;
        for k in (0..self.len()).filter(|&k| self.eligible(k)) {
            if best.is_none_or(|b| self.degree(k) > self.degree(b)) {
                best = Some(k);
            }
        }
        best
    }

    /// Samples an eligible candidate with probability proportional to
    /// `weights`, or uniformly when every eligible weight is zero.
    fn sample(&self, weights: &[u64], rng: &mut Rng) -> Option<usize> {
        let eligible: Vec<usize> = (0..self.len()).filter(|&k| self.eligible(k)).collect();
        if eligible.is_empty() {
            return None;
        }
        let total: u64 = eligible.iter().map(|&k| weights[k]).sum();
        if total == 0 {
            return eligible.choose(rng).copied();
        }
        let mut r = rng.random_range(0..total);
        for &k in &eligible {
            if r < weights[k] {
                return Some(k);
            }
            r -= weights[k];
        }
        unreachable!("sampled mass exceeds the total")
    }

    fn finish(self) -> Vec<VertexId> {
        self.order
    }
}

fn check_budget(b: usize) -> Result<()> {
    if b == 0 {
        return Err(Error::invalid("budget must be at least 1"));
    }
    Ok(())
}

fn greedy(mut pool: Pool<'_>, b: usize) -> Vec<VertexId> {
    let Some(first) = pool.max_degree() else {
        return pool.finish();
    };
    pool.take(first);
    while pool.order.len() < b {
        let mut best: Option<(usize, u32)> = None;
        for k in (0..pool.len()).filter(|&k| pool.eligible(k)) {
            let d = pool.dist[pool.local[k]];
            if best.is_none_or(|(_, bd)| d > bd) {
                best = Some((k, d));
            }
        }
        match best {
            Some((k, _)) => pool.take(k),
            None => break,
        }
    }
    pool.finish()
}

fn distance_sampling(mut pool: Pool<'_>, b: usize, seed: u64) -> Vec<VertexId> {
    let mut rng = rng_from(seed);
    let Some(first) = pool.max_degree() else {
        return pool.finish();
    };
    pool.take(first);
    while pool.order.len() < b {
        let weights = pool.capped_distances();
        match pool.sample(&weights, &mut rng) {
            Some(k) => pool.take(k),
            None => break,
        }
    }
    pool.finish()
}

fn degree_distance(mut pool: Pool<'_>, b: usize, seed: u64) -> Vec<VertexId> {
    let mut rng = rng_from(seed);
    let degrees: Vec<u64> = (0..pool.len()).map(|k| pool.degree(k)).collect();
    if let Some(first) = pool.sample(&degrees, &mut rng) {
        pool.take(first);
    }
    while pool.order.len() < b {
        let weights: Vec<u64> = pool
            .capped_distances()
            .iter()
            .zip(&degrees)
            .map(|(d, g)| d * g)
            .collect();
        match pool.sample(&weights, &mut rng) {
            Some(k) => pool.take(k),
            None => break,
        }
    }
    pool.finish()
}

fn random(mut pool: Pool<'_>, b: usize, seed: u64) -> Vec<VertexId> {
    let mut rng = rng_from(seed);
    let uniform = vec![1; pool.len()];
    while pool.order.len() < b {
        match pool.sample(&uniform, &mut rng) {
            Some(k) => pool.take(k),
            None => break,
        }
    }
    pool.finish()
}

fn top_degree(mut pool: Pool<'_>, b: usize) -> Vec<VertexId> {
    let mut ranked: Vec<usize> = (0..pool.len()).collect();
    // Stable sort keeps ascending ids among equal degrees.
    ranked.sort_by_key(|&k| std::cmp::Reverse(pool.degree(k)));
    for k in ranked {
        if pool.order.len() == b {
            break;
        }
        if pool.eligible(k) {
            pool.take(k);
        }
    }
    pool.finish()
}

/// Ranks every class by distance to its mean embedding, then takes one
/// vertex per class in turn, ascending class order.
fn representation(mut pool: Pool<'_>, b: usize, embeddings: &EmbeddingTable) -> Result<Vec<VertexId>> {
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for k in 0..pool.len() {
        by_class.entry(pool.class[k]).or_default().push(k);
    }
    let mut queues = Vec::new();
    for members in by_class.values() {
        let ids: Vec<VertexId> = members.iter().map(|&k| pool.ids[k]).collect();
        let rows = embeddings.select(&ids)?;
        let mean = rows.mean_axis(ndarray::Axis(0)).expect("class is non-empty");
        let mut ranked: Vec<(f64, usize)> = members
            .iter()
            .zip(rows.rows())
            .map(|(&k, r)| ((&r - &mean).mapv(|x| x * x).sum().sqrt(), k))
            .collect();
        ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        queues.push(ranked.into_iter().map(|(_, k)| k).collect::<std::collections::VecDeque<_>>());
    }
    while pool.order.len() < b {
        let mut progressed = false;
        for q in &mut queues {
            if pool.order.len() == b {
                break;
            }
            while let Some(k) = q.pop_front() {
                if pool.eligible(k) {
                    pool.take(k);
                    progressed = true;
                    break;
                }
            }
        }
        if !progressed {
            break;
        }
    }
    Ok(pool.finish())
}

/// Farthest-first k-center selection. Starts at the highest-degree candidate
/// and repeatedly adds the candidate farthest from the current set;
/// unreachable candidates count as farthest and ties go to the smallest id.
pub fn select_kcenter_greedy(g: &Graph, candidates: &[VertexId], b: usize) -> Result<Vec<VertexId>> {
    check_budget(b)?;
    Ok(greedy(Pool::new(g, candidates, None)?, b))
}

/// Like [`select_kcenter_greedy`] but samples each further center with
/// probability proportional to its distance from the current set.
pub fn select_kcenter_sampling(g: &Graph, candidates: &[VertexId], b: usize, seed: u64) -> Result<Vec<VertexId>> {
    check_budget(b)?;
    Ok(distance_sampling(Pool::new(g, candidates, None)?, b, seed))
}

/// First pick proportional to degree, then proportional to degree times
/// distance from the current set.
pub fn select_degree_distance(g: &Graph, candidates: &[VertexId], b: usize, seed: u64) -> Result<Vec<VertexId>> {
    check_budget(b)?;
    Ok(degree_distance(Pool::new(g, candidates, None)?, b, seed))
}

/// Embeddings plus candidate labels, aligned with the candidate slice.
#[derive(Debug, Clone, Copy)]
pub struct RepresentationInput<'a> {
    pub embeddings: &'a EmbeddingTable,
    pub labels: &'a [usize],
}

/// Random, top-degree or representation-based selection.
pub fn select_baseline(
    strategy: Strategy,
    g: &Graph,
    candidates: &[VertexId],
    b: usize,
    seed: u64,
    representation: Option<RepresentationInput<'_>>,
) -> Result<Vec<VertexId>> {
    check_budget(b)?;
    match strategy {
        Strategy::Random => Ok(random(Pool::new(g, candidates, None)?, b, seed)),
        Strategy::TopDegree => Ok(top_degree(Pool::new(g, candidates, None)?, b)),
        Strategy::Representation => {
            let rep = representation
                .ok_or_else(|| Error::invalid("representation selection needs embeddings"))?;
            self::representation(Pool::new(g, candidates, Some(rep.labels))?, b, rep.embeddings)
        }
        other => Err(Error::invalid(format!("{other} is not a baseline strategy"))),
    }
}

/// Everything a strategy may need to pick one task's replay set.
#[derive(Debug, Clone, Copy)]
pub struct SelectionRequest<'a> {
    pub graph: &'a Graph,
    pub candidates: &'a [VertexId],
    /// Class labels aligned with `candidates`.
    pub labels: &'a [usize],
    pub budget: usize,
    pub seed: u64,
    /// Split the budget over classes with [`stratify_by_class`] so every
    /// class present among the candidates is represented.
    pub stratify: bool,
    pub embeddings: Option<&'a EmbeddingTable>,
}

/// Runs `strategy` on `req`; returns the chosen vertices in selection order.
pub fn select(strategy: Strategy, req: &SelectionRequest<'_>) -> Result<Vec<VertexId>> {
    check_budget(req.budget)?;
    let mut pool = Pool::new(req.graph, req.candidates, Some(req.labels))?;
    if req.stratify {
        pool.stratify(req.budget)?;
    }
    let b = req.budget;
    Ok(match strategy {
        Strategy::KcenterGreedy => greedy(pool, b),
        Strategy::KcenterSampling => distance_sampling(pool, b, req.seed),
        Strategy::DegreeDistance => degree_distance(pool, b, req.seed),
        Strategy::Random => random(pool, b, req.seed),
        Strategy::TopDegree => top_degree(pool, b),
        Strategy::Representation => {
            let emb = req
                .embeddings
                .ok_or_else(|| Error::invalid("representation selection needs embeddings"))?;
            representation(pool, b, emb)?
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::coverage_radius;
    use crate::graph::tests::{path, random_graph};
    use crate::graph::Hops;
    use ndarray::Array2;
    use proptest::prelude::{any, prop, prop_assert, prop_assert_eq, proptest};

    fn star(leaves: usize) -> Graph {
        Graph::from_edges(0..=leaves, (1..=leaves).map(|l| (0, l)).collect::<Vec<_>>()).unwrap()
    }

    fn sorted(mut v: Vec<VertexId>) -> Vec<VertexId> {
        v.sort_unstable();
        v
    }

    /// Smallest coverage radius over all `b`-subsets of `cands`.
    fn optimal_radius(g: &Graph, cands: &[VertexId], b: usize) -> Hops {
        let n = cands.len();
        let mut best = Hops::Unreachable;
        for mask in 0u32..(1 << n) {
            if mask.count_ones() as usize != b {
                continue;
            }
            let centers: Vec<VertexId> = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| cands[i]).collect();
            best = best.min(coverage_radius(g, cands, &centers).unwrap());
        }
        best
    }

    fn within_twice(greedy: Hops, opt: Hops) -> bool {
        match (greedy, opt) {
            (_, Hops::Unreachable) => true,
            (Hops::Unreachable, _) => false,
            (Hops::Finite(a), Hops::Finite(o)) => a <= 2 * o,
        }
    }

    #[test]
    fn strategy_names_round_trip() {
        for s in Strategy::ALL {
            assert_eq!(s.as_str().parse::<Strategy>().unwrap(), s);
            assert_eq!(serde_json::to_string(&s).unwrap(), format!("\"{s}\""));
        }
        assert!("kcenter".parse::<Strategy>().is_err());
    }

    #[test]
    fn whole_pool_when_budget_exceeds_candidates() {
        let g = random_graph(10, 0.3, 1);
        let cands = [1, 3, 5, 7];
        assert_eq!(sorted(select_kcenter_greedy(&g, &cands, 9).unwrap()), cands);
        assert_eq!(sorted(select_kcenter_sampling(&g, &cands, 4, 3).unwrap()), cands);
        assert_eq!(sorted(select_degree_distance(&g, &cands, 4, 3).unwrap()), cands);
        for s in [Strategy::Random, Strategy::TopDegree] {
            assert_eq!(sorted(select_baseline(s, &g, &cands, 5, 3, None).unwrap()), cands);
        }
    }

    #[test]
    fn star_center_is_picked_first() {
        let g = star(5);
        let cands: Vec<_> = (0..6).collect();
        let p = select_kcenter_greedy(&g, &cands, 1).unwrap();
        assert_eq!(p, vec![0]);
        assert_eq!(coverage_radius(&g, &cands, &p).unwrap(), Hops::Finite(1));
        assert_eq!(select_kcenter_sampling(&g, &cands, 1, 9).unwrap(), vec![0]);
        assert_eq!(select_baseline(Strategy::TopDegree, &g, &cands, 1, 0, None).unwrap(), vec![0]);
    }

    #[test]
    fn greedy_is_farthest_first_with_smallest_id_ties() {
        // Path 0..=6: degree ties broken to vertex 1, then 6 is farthest,
        // then 3 and 4 tie at distance 2 from {1, 6}.
        let g = path(7);
        let cands: Vec<_> = (0..7).collect();
        assert_eq!(select_kcenter_greedy(&g, &cands, 3).unwrap(), vec![1, 6, 3]);
    }

    #[test]
    fn greedy_prefers_unreachable_candidates() {
        let g = Graph::from_edges(0..6, [(0, 1), (1, 2), (2, 3), (4, 5)]).unwrap();
        let p = select_kcenter_greedy(&g, &[0, 1, 2, 3, 4, 5], 2).unwrap();
        assert_eq!(p, vec![1, 4]);
    }

    #[test]
    fn argument_errors() {
        let g = path(3);
        assert!(select_kcenter_greedy(&g, &[], 1).is_err());
        assert!(select_kcenter_greedy(&g, &[0], 0).is_err());
        assert!(select_kcenter_greedy(&g, &[0, 0], 1).is_err());
        assert!(select_kcenter_greedy(&g, &[7], 1).is_err());
        assert!(select_baseline(Strategy::Representation, &g, &[0], 1, 0, None).is_err());
        assert!(select_baseline(Strategy::KcenterGreedy, &g, &[0], 1, 0, None).is_err());
    }

    #[test]
    fn greedy_two_approximation_on_small_graphs() {
        for seed in 0..150 {
            let n = 4 + (seed as usize % 9);
            let g = random_graph(n, 0.2 + 0.05 * (seed % 5) as f64, 1000 + seed);
            let cands: Vec<_> = (0..n).collect();
            for b in 1..=3 {
                let p = select_kcenter_greedy(&g, &cands, b).unwrap();
                let r = coverage_radius(&g, &cands, &p).unwrap();
                let opt = optimal_radius(&g, &cands, b);
                assert!(within_twice(r, opt), "seed {seed} b {b}: greedy {r} vs optimal {opt}");
            }
        }
    }

    #[test]
    fn sampling_single_candidate() {
        let g = path(4);
        for seed in 0..20 {
            assert_eq!(select_kcenter_sampling(&g, &[2], 3, seed).unwrap(), vec![2]);
        }
    }

    #[test]
    fn sampling_is_symmetric_under_automorphism() {
        // Path 0-1-2: the center goes first, then the two ends are mirror images.
        let g = path(3);
        let trials = 10_000u64;
        let zero = (0..trials)
            .filter(|&s| select_kcenter_sampling(&g, &[0, 1, 2], 2, s).unwrap()[1] == 0)
            .count() as f64;
        let expect = trials as f64 / 2.0;
        let chi2 = 2.0 * (zero - expect).powi(2) / expect;
        // 99.9% quantile of chi-square with one degree of freedom.
        assert!(chi2 < 10.83, "chi2 = {chi2}");
    }

    #[test]
    fn sampling_mass_follows_distance() {
        // Star with center 0 and a tail 3-4-5: after the center, only the
        // tail end at distance 3 has mass 3 against 1 for each other leaf.
        let g = Graph::from_edges(0..6, [(0, 1), (0, 2), (0, 3), (3, 4), (4, 5)]).unwrap();
        let trials = 10_000u64;
        let hits = (0..trials)
            .filter(|&s| select_kcenter_sampling(&g, &[0, 1, 5], 2, s).unwrap()[1] == 5)
            .count() as f64;
        let p = 3.0 / 4.0;
        let sd = (p * (1.0 - p) / trials as f64).sqrt();
        assert!((hits / trials as f64 - p).abs() < 4.5 * sd);
    }

    #[test]
    fn sampling_sole_positive_mass_is_certain() {
        // Candidates {0, 1}; once 0 is chosen only 1 has non-zero distance.
        let g = star(3);
        for seed in 0..50 {
            assert_eq!(select_kcenter_sampling(&g, &[0, 1], 2, seed).unwrap(), vec![0, 1]);
        }
    }

    #[test]
    fn unreachable_candidates_keep_mass() {
        let g = Graph::from_edges(0..4, [(0, 1), (1, 2)]).unwrap();
        let picked_isolated = (0..200u64)
            .filter(|&s| select_kcenter_sampling(&g, &[0, 1, 2, 3], 2, s).unwrap().contains(&3))
            .count();
        assert!(picked_isolated > 0);
    }

    #[test]
    fn degree_distance_initial_odds_follow_degree() {
        // Vertex 1 has degree 1 and vertex 2 has degree 3.
        let g = Graph::from_edges(0..5, [(0, 1), (2, 0), (2, 3), (2, 4)]).unwrap();
        let trials = 10_000u64;
        let hits = (0..trials)
            .filter(|&s| select_degree_distance(&g, &[1, 2], 1, s).unwrap() == vec![2])
            .count() as f64;
        let p = 0.75;
        let sd = (p * (1.0 - p) / trials as f64).sqrt();
        assert!((hits / trials as f64 - p).abs() < 4.5 * sd, "{}", hits / trials as f64);
    }

    #[test]
    fn degree_distance_second_pick_weights_degree_times_distance() {
        // Hub 0 with degree 4; candidates 1 (degree 1) and 2 (degree 3) both
        // sit at distance 1 from the hub, so once the hub is in, odds are 1:3.
        let g = Graph::from_edges(0..6, [(0, 1), (0, 2), (0, 3), (0, 4), (2, 5), (3, 5)]).unwrap();
        let g = Graph::from_edges(0..7, g.edges().chain([(2, 6)]).collect::<Vec<_>>()).unwrap();
        let mut hub_first: f64 = 0.0;
        let mut two_second: f64 = 0.0;
        for s in 0..20_000u64 {
            let p = select_degree_distance(&g, &[0, 1, 2], 2, s).unwrap();
            if p[0] == 0 {
                hub_first += 1.0;
                if p[1] == 2 {
                    two_second += 1.0;
                }
            }
        }
        let p = 0.75;
        let sd = (p * (1.0 - p) / hub_first).sqrt();
        assert!((two_second / hub_first - p).abs() < 4.5 * sd);
    }

    #[test]
    fn degree_distance_isolated_pool_falls_back_to_uniform() {
        let g = Graph::from_edges(0..3, []).unwrap();
        let p = select_degree_distance(&g, &[0, 1, 2], 2, 4).unwrap();
        assert_eq!(p.len(), 2);
    }

    #[test]
    fn random_inclusion_is_uniform() {
        let g = random_graph(10, 0.3, 2);
        let cands: Vec<_> = (0..10).collect();
        let trials = 10_000u64;
        let mut counts = [0.0; 10];
        for s in 0..trials {
            for v in select_baseline(Strategy::Random, &g, &cands, 3, s, None).unwrap() {
                counts[v] += 1.0;
            }
        }
        let p = 0.3;
        let sd = (p * (1.0 - p) / trials as f64).sqrt();
        for c in counts {
            assert!((c / trials as f64 - p).abs() < 4.5 * sd);
        }
    }

    #[test]
    fn top_degree_ties_to_smallest_id() {
        let g = Graph::from_edges(0..5, [(0, 1), (2, 3), (3, 4), (1, 4)]).unwrap();
        // Degrees: 0:1, 1:2, 2:1, 3:2, 4:2.
        let p = select_baseline(Strategy::TopDegree, &g, &[0, 1, 2, 3, 4], 3, 0, None).unwrap();
        assert_eq!(p, vec![1, 3, 4]);
    }

    #[test]
    fn representation_takes_class_centers_round_robin() {
        let g = path(6);
        let rows = Array2::from_shape_vec(
            (6, 1),
            vec![0.0, 1.0, 2.0, 10.0, 20.0, 12.0],
        )
        .unwrap();
        let emb = EmbeddingTable { ids: (0..6).collect(), rows };
        let labels = [0, 0, 0, 1, 1, 1];
        let rep = RepresentationInput { embeddings: &emb, labels: &labels };
        let p = select_baseline(Strategy::Representation, &g, &[0, 1, 2, 3, 4, 5], 3, 0, Some(rep)).unwrap();
        // Class 0 mean 1 -> vertex 1; class 1 mean 14 -> vertex 5, then 3.
        assert_eq!(p, vec![1, 5, 0]);
    }

    #[test]
    fn stratify_examples() {
        let two = stratify_by_class(&[0, 0, 0, 1, 1, 1], 4).unwrap();
        assert_eq!(two.into_values().collect::<Vec<_>>(), vec![2, 2]);
        let three = stratify_by_class(&[2, 0, 1, 1, 0, 2], 4).unwrap();
        assert_eq!(three.into_iter().collect::<Vec<_>>(), vec![(0, 2), (1, 1), (2, 1)]);
        assert!(stratify_by_class(&[0, 1, 2], 2).is_err());
        // Class 1 has a single candidate, so its share moves to class 0.
        let capped = stratify_by_class(&[0, 0, 0, 0, 1], 4).unwrap();
        assert_eq!(capped.into_values().collect::<Vec<_>>(), vec![3, 1]);
    }

    #[test]
    fn stratified_selection_covers_every_class() {
        let g = random_graph(30, 0.1, 3);
        let cands: Vec<_> = (0..30).collect();
        // Class 2 is a single peripheral vertex.
        let labels: Vec<usize> = (0..30).map(|v| if v == 29 { 2 } else { v % 2 }).collect();
        let emb = EmbeddingTable { ids: cands.clone(), rows: Array2::from_shape_fn((30, 2), |(i, j)| (i * (j + 1)) as f64) };
        for s in Strategy::ALL {
            let req = SelectionRequest {
                graph: &g,
                candidates: &cands,
                labels: &labels,
                budget: 3,
                seed: 5,
                stratify: true,
                embeddings: Some(&emb),
            };
            let p = select(s, &req).unwrap();
            let classes: std::collections::BTreeSet<_> = p.iter().map(|&v| labels[v]).collect();
            assert_eq!(classes.len(), 3, "{s}: {p:?}");
        }
    }

    #[test]
    fn buffer_rejects_overlap_and_disorder() {
        let mut buf = ExperienceBuffer::new(Strategy::KcenterGreedy, 0);
        buf.push(1, 2, vec![0, 1]).unwrap();
        assert!(buf.push(2, 2, vec![1, 5]).is_err());
        assert!(buf.push(1, 2, vec![4]).is_err());
        assert!(buf.push(2, 1, vec![4, 5]).is_err());
        buf.push(2, 2, vec![4, 5]).unwrap();
        assert_eq!(buf.len(), 4);
    }

    proptest! {
        #[test]
        fn stratified_budgets_are_balanced(labels in prop::collection::vec(0usize..5, 1..40), extra in 0usize..20) {
            let classes: std::collections::BTreeSet<_> = labels.iter().copied().collect();
            let b = classes.len() + extra;
            let budgets = stratify_by_class(&labels, b).unwrap();
            prop_assert_eq!(budgets.values().sum::<usize>(), b.min(labels.len()));
            let uncapped: Vec<usize> = budgets
                .iter()
                .filter(|(c, &n)| n < labels.iter().filter(|&&l| l == **c).count())
                .map(|(_, &n)| n)
                .collect();
            for (_, &n) in &budgets {
                prop_assert!(n >= 1);
                // A class left below its size got at least as much as any other.
                prop_assert!(uncapped.iter().all(|&u| u + 1 >= n));
            }
        }

        #[test]
        fn samplers_are_deterministic_and_sized(n in 3usize..25, b in 1usize..8, seed in any::<u64>(), gseed in 0u64..1000) {
            let g = random_graph(n, 0.2, gseed);
            let cands: Vec<_> = (0..n).step_by(2).collect();
            let labels = vec![0; cands.len()];
            for s in Strategy::ALL.into_iter().filter(|s| !s.needs_embeddings()) {
                let req = SelectionRequest { graph: &g, candidates: &cands, labels: &labels, budget: b, seed, stratify: false, embeddings: None };
                let p = select(s, &req).unwrap();
                prop_assert_eq!(&p, &select(s, &req).unwrap());
                prop_assert_eq!(p.len(), b.min(cands.len()));
                prop_assert_eq!(sorted(p.clone()).windows(2).filter(|w| w[0] == w[1]).count(), 0);
                prop_assert!(p.iter().all(|v| cands.contains(v)));
            }
        }

        #[test]
        fn greedy_radius_shrinks_with_budget(n in 3usize..20, gseed in 0u64..1000) {
            let g = random_graph(n, 0.25, gseed);
            let cands: Vec<_> = (0..n).collect();
            let full = select_kcenter_greedy(&g, &cands, n).unwrap();
            for b in 1..n {
                // Farthest-first is a prefix order, so radii along it never grow.
                prop_assert_eq!(&select_kcenter_greedy(&g, &cands, b).unwrap()[..], &full[..b]);
                let r1 = coverage_radius(&g, &cands, &full[..b]).unwrap();
                let r2 = coverage_radius(&g, &cands, &full[..b + 1]).unwrap();
                prop_assert!(r2 <= r1);
            }
        }
    }
}
