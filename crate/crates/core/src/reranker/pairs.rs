use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// A training pair of example indices: `positive` should outrank
/// `negative`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RankPair {
    pub query_id: String,
    pub positive: usize,
    pub negative: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum PairPolicy {
    /// Every positive-label example against every negative-label example
    /// of the same query.
    #[default]
    Label,
    /// Any two examples of a query whose mig differs by more than
    /// `margin`, higher mig first.
    MigOrdered { margin: f64 },
}

/// What pair sampling needs to know about an example.
pub trait PairSource {
    fn query_id(&self) -> &str;
    fn label(&self) -> u8;
    fn mig(&self) -> f64;
}

impl PairSource for crate::mig::LabeledExample {
    fn query_id(&self) -> &str {
        &self.scored.triplet.query
    }
    fn label(&self) -> u8 {
        self.label
    }
    fn mig(&self) -> f64 {
        self.scored.mig
    }
}

/// Builds per-query candidate pairs under `policy` and keeps at most `cap`
/// per query by seeded uniform sampling. Queries are visited in sorted order
/// so the result depends only on the data and the seed.
pub fn sample_pairs<T: PairSource>(
    items: &[T],
    policy: PairPolicy,
    cap: usize,
    seed: u64,
) -> Vec<RankPair> {
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, it) in items.iter().enumerate() {
        groups.entry(it.query_id()).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for (qid, members) in groups {
        let candidates: Vec<(usize, usize)> = match policy {
            PairPolicy::Label => {
                let pos: Vec<usize> = members
                    .iter()
                    .copied()
                    .filter(|&i| items[i].label() == 1)
                    .collect();
                let neg: Vec<usize> = members
                    .iter()
                    .copied()
                    .filter(|&i| items[i].label() == 0)
                    .collect();
                pos.iter()
                    .flat_map(|&p| neg.iter().map(move |&n| (p, n)))
                    .collect()
            }
            PairPolicy::MigOrdered { margin } => {
                let mut c = Vec::new();
                for &a in &members {
                    for &b in &members {
                        if items[a].mig() - items[b].mig() > margin {
                            c.push((a, b));
                        }
                    }
                }
                c
            }
        };
        let chosen: Vec<(usize, usize)> = if candidates.len() > cap {
            let mut idx = sample(&mut rng, candidates.len(), cap).into_vec();
            idx.sort_unstable();
            idx.into_iter().map(|i| candidates[i]).collect()
        } else {
            candidates
        };
        out.extend(chosen.into_iter().map(|(positive, negative)| RankPair {
            query_id: qid.to_string(),
            positive,
            negative,
        }));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Ex(&'static str, u8, f64);
    impl PairSource for Ex {
        fn query_id(&self) -> &str {
            self.0
        }
        fn label(&self) -> u8 {
            self.1
        }
        fn mig(&self) -> f64 {
            self.2
        }
    }

    fn two_by_three() -> Vec<Ex> {
        vec![
            Ex("q", 1, 0.5),
            Ex("q", 0, -0.5),
            Ex("q", 1, 0.6),
            Ex("q", 0, -0.3),
            Ex("q", 0, -0.4),
        ]
    }

    #[test]
    fn full_cross_product() {
        let pairs = sample_pairs(&two_by_three(), PairPolicy::Label, 100, 0);
        assert_eq!(pairs.len(), 6);
        for p in &pairs {
            assert_eq!(p.query_id, "q");
        }
    }

    #[test]
    fn cap_is_reproducible() {
        let a = sample_pairs(&two_by_three(), PairPolicy::Label, 4, 9);
        let b = sample_pairs(&two_by_three(), PairPolicy::Label, 4, 9);
        assert_eq!(a.len(), 4);
        assert_eq!(a, b);
    }

    #[test]
    fn single_class_query_has_no_pairs() {
        let items = vec![Ex("q", 1, 0.5), Ex("q", 1, 0.6), Ex("r", 0, -0.3)];
        assert!(sample_pairs(&items, PairPolicy::Label, 10, 0).is_empty());
    }

    #[test]
    fn mig_ordered_respects_margin() {
        let items = vec![Ex("q", 1, 0.5), Ex("q", 1, 0.45), Ex("q", 0, -0.3)];
        let pairs = sample_pairs(&items, PairPolicy::MigOrdered { margin: 0.1 }, 10, 0);
        let got: Vec<(usize, usize)> = pairs.iter().map(|p| (p.positive, p.negative)).collect();
        assert_eq!(got, vec![(0, 2), (1, 2)]);
    }
}
