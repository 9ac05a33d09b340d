use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{AffinityPosterior, UserPosterior};
use crate::corpus::AdjacencySet;
use crate::error::{JnetError, Result};
use crate::scalar::{dot, Real};

/// Which user pairs carry an affinity posterior.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum PairStrategy {
    /// Every unordered pair, each counted once.
    AllPairs,
    /// All edges plus `ratio · |edges|` non-edges drawn per sweep, the
    /// non-edges reweighted by the inverse sampling fraction.
    Sampled { ratio: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairTerm<T> {
    pub i: usize,
    pub j: usize,
    pub edge: bool,
    pub weight: T,
    pub post: AffinityPosterior<T>,
}

/// The modeled pair set with per-user lookup.
#[derive(Debug, Clone, PartialEq)]
pub struct PairSet<T> {
    strategy: PairStrategy,
    num_users: usize,
    pub terms: Vec<PairTerm<T>>,
    /// per-user term indices; unused for `AllPairs`, where the index is arithmetic
    by_user: Vec<Vec<usize>>,
}

/// Position of pair `i < j` in lexicographic order over all unordered pairs.
#[inline]
fn tri_index(n: usize, i: usize, j: usize) -> usize {
    debug_assert!(i < j && j < n);
    i * (2 * n - i - 1) / 2 + (j - i - 1)
}

impl<T: Real> PairSet<T> {
    pub fn build<R: Rng + ?Sized>(
        adj: &AdjacencySet,
        strategy: PairStrategy,
        users: &[UserPosterior<T>],
        xi: T,
        rng: &mut R,
    ) -> Result<Self> {
        let n = adj.num_users();
        match strategy {
            PairStrategy::AllPairs => {
                let mut terms = Vec::with_capacity(n * n.saturating_sub(1) / 2);
                for i in 0..n {
                    for j in (i + 1)..n {
                        let c = dot(&users[i].mean, &users[j].mean);
                        terms.push(PairTerm {
                            i,
                            j,
                            edge: adj.contains(i, j),
                            weight: T::one(),
                            post: AffinityPosterior::new(c, xi),
                        });
                    }
                }
                Ok(Self { strategy, num_users: n, terms, by_user: Vec::new() })
            }
            PairStrategy::Sampled { ratio } => {
                if !(ratio >= 1.0) {
                    return Err(JnetError::Invalid(format!("sampling ratio must be >= 1, got {ratio}")));
                }
                let mut set = Self { strategy, num_users: n, terms: Vec::new(), by_user: vec![Vec::new(); n] };
                set.resample(adj, users, xi, rng);
                Ok(set)
            }
        }
    }

    /// Rebuilds a pair set from explicit terms (as saved in a checkpoint).
    pub fn from_terms(strategy: PairStrategy, num_users: usize, terms: Vec<PairTerm<T>>) -> Result<Self> {
        for t in &terms {
            if t.i >= t.j || t.j >= num_users {
                return Err(JnetError::Invalid(format!("bad pair ({}, {})", t.i, t.j)));
            }
        }
        let by_user = match strategy {
            PairStrategy::AllPairs => {
                let ordered = terms.len() == num_users * num_users.saturating_sub(1) / 2
                    && terms.iter().enumerate().all(|(k, t)| tri_index(num_users, t.i, t.j) == k);
                if !ordered {
                    return Err(JnetError::Invalid("all-pairs terms must cover every pair in order".into()));
                }
                Vec::new()
            }
            PairStrategy::Sampled { .. } => {
                let mut by_user = vec![Vec::new(); num_users];
                for (k, t) in terms.iter().enumerate() {
                    by_user[t.i].push(k);
                    by_user[t.j].push(k);
                }
                by_user
            }
        };
        Ok(Self { strategy, num_users, terms, by_user })
    }

    pub fn strategy(&self) -> PairStrategy {
        self.strategy
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// Redraws the sampled non-edges; a no-op for `AllPairs`.
    pub fn resample<R: Rng + ?Sized>(&mut self, adj: &AdjacencySet, users: &[UserPosterior<T>], xi: T, rng: &mut R) {
        let PairStrategy::Sampled { ratio } = self.strategy else { return };
        let n = self.num_users;
        let total_pairs = n * n.saturating_sub(1) / 2;
        let non_edges = total_pairs - adj.len();
        let want = ((ratio * adj.len() as f64).ceil() as usize).min(non_edges);
        self.terms.clear();
        let fresh = |i: usize, j: usize, edge: bool, weight: T| PairTerm {
            i,
            j,
            edge,
            weight,
            post: AffinityPosterior::new(dot(&users[i].mean, &users[j].mean), xi),
        };
        for (i, j) in adj.edges() {
            self.terms.push(fresh(i, j, true, T::one()));
        }
        if want > 0 {
            let weight = T::from_count(non_edges) / T::from_count(want);
            // rejection sampling; density is low whenever sampling is worthwhile
            let mut picked: Vec<(usize, usize)> = Vec::with_capacity(want);
            if non_edges <= 4 * want {
                let all: Vec<(usize, usize)> = (0..n)
                    .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
                    .filter(|&(i, j)| !adj.contains(i, j))
                    .collect();
                picked.extend(index::sample(rng, all.len(), want).into_iter().map(|k| all[k]));
            } else {
                let mut seen = std::collections::HashSet::with_capacity(want);
                while picked.len() < want {
                    let i = rng.random_range(0..n);
                    let j = rng.random_range(0..n);
                    if i == j || adj.contains(i, j) {
                        continue;
                    }
                    let key = (i.min(j), i.max(j));
                    if seen.insert(key) {
                        picked.push(key);
                    }
                }
            }
            picked.sort_unstable();
            for (i, j) in picked {
                self.terms.push(fresh(i, j, false, weight));
            }
        }
        for l in &mut self.by_user {
            l.clear();
        }
        for (t, term) in self.terms.iter().enumerate() {
            self.by_user[term.i].push(t);
            self.by_user[term.j].push(t);
        }
    }

    /// Calls `f(peer, term)` for every modeled pair containing user `i`.
    pub fn for_each_peer(&self, i: usize, mut f: impl FnMut(usize, &PairTerm<T>)) {
        match self.strategy {
            PairStrategy::AllPairs => {
                let n = self.num_users;
                for j in 0..n {
                    if j == i {
                        continue;
                    }
                    let t = &self.terms[tri_index(n, i.min(j), i.max(j))];
                    f(j, t);
                }
            }
            PairStrategy::Sampled { .. } => {
                for &t in &self.by_user[i] {
                    let term = &self.terms[t];
                    f(if term.i == i { term.j } else { term.i }, term);
                }
            }
        }
    }

    /// Term for the unordered pair `{i, j}`, if modeled.
    pub fn get(&self, i: usize, j: usize) -> Option<&PairTerm<T>> {
        if i == j || i >= self.num_users || j >= self.num_users {
            return None;
        }
        let (a, b) = (i.min(j), i.max(j));
        match self.strategy {
            PairStrategy::AllPairs => self.terms.get(tri_index(self.num_users, a, b)),
            PairStrategy::Sampled { .. } => {
                self.by_user[a].iter().map(|&t| &self.terms[t]).find(|t| t.i == a && t.j == b)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Mat;
    use rand::SeedableRng;

    fn users(n: usize) -> Vec<UserPosterior<f64>> {
        (0..n).map(|i| UserPosterior { mean: vec![i as f64 * 0.1, 1.0], cov: Mat::identity(2) }).collect()
    }

    #[test]
    fn triangular_index_is_dense() {
        let n = 7;
        let mut k = 0;
        for i in 0..n {
            for j in (i + 1)..n {
                assert_eq!(tri_index(n, i, j), k);
                k += 1;
            }
        }
    }

    #[test]
    fn all_pairs_visits_each_peer_once() {
        let adj = AdjacencySet::from_edges(5, [(0, 3), (1, 2)]).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let p = PairSet::build(&adj, PairStrategy::AllPairs, &users(5), 1.0, &mut rng).unwrap();
        assert_eq!(p.len(), 10);
        let mut peers = Vec::new();
        p.for_each_peer(3, |j, t| {
            assert!(t.i == 3 || t.j == 3);
            peers.push((j, t.edge));
        });
        assert_eq!(peers, vec![(0, true), (1, false), (2, false), (4, false)]);
        assert!((p.get(4, 2).unwrap().post.mean - (0.4 * 0.2 + 1.0)).abs() < 1e-12);
    }

    #[test]
    fn sampled_pairs_keep_edges_and_reweight() {
        let adj = AdjacencySet::from_edges(30, [(0, 1), (2, 3), (4, 5)]).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let p = PairSet::build(&adj, PairStrategy::Sampled { ratio: 2.0 }, &users(30), 1.0, &mut rng).unwrap();
        assert_eq!(p.terms.iter().filter(|t| t.edge).count(), 3);
        let neg: Vec<_> = p.terms.iter().filter(|t| !t.edge).collect();
        assert_eq!(neg.len(), 6);
        // weights sum to the number of non-edges
        let total: f64 = neg.iter().map(|t| t.weight).sum();
        assert!((total - (435.0 - 3.0)).abs() < 1e-9);
        let mut count = 0;
        p.for_each_peer(0, |_, _| count += 1);
        assert!(count >= 1);
        assert!(p.get(1, 0).unwrap().edge);
    }

    #[test]
    fn sampling_ratio_below_one_rejected() {
        let adj = AdjacencySet::new(3);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        assert!(PairSet::build(&adj, PairStrategy::Sampled { ratio: 0.5 }, &users(3), 1.0, &mut rng).is_err());
    }
}
