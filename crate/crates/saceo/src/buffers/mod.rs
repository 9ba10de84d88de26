//! The three datasets of the training loop: replay buffer, model-training
//! buffer, and the state-only expert dataset.

mod expert_file;

pub use expert_file::{load_expert_file, save_expert_file};

use crate::error::{Error, Result};
use crate::rng::SeededRng;

/// One environment step.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_state: Vec<f64>,
}

/// Fixed-capacity FIFO ring with uniform with-replacement sampling.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    items: Vec<Transition>,
    capacity: usize,
    head: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("replay capacity must be positive".into()));
        }
        Ok(ReplayBuffer {
            items: Vec::new(),
            capacity,
            head: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.head] = t;
            self.head = (self.head + 1) % self.capacity;
        }
    }

    /// Item `i` in insertion order, oldest first.
    pub fn get_ordered(&self, i: usize) -> &Transition {
        if self.items.len() < self.capacity {
            &self.items[i]
        } else {
            &self.items[(self.head + i) % self.capacity]
        }
    }

    /// Item at physical slot `i`; pairs with [`Self::sample_indices`].
    pub fn get_physical(&self, i: usize) -> &Transition {
        &self.items[i]
    }

    /// Uniform with replacement; indices drawn from the shared stream so a
    /// seeded run replays the same batches.
    pub fn sample_indices(&self, batch: usize, rng: &mut SeededRng) -> Result<Vec<usize>> {
        if self.items.is_empty() {
            return Err(Error::Usage("cannot sample from an empty buffer".into()));
        }
        Ok((0..batch).map(|_| rng.index(self.items.len())).collect())
    }

    pub fn sample_batch(&self, batch: usize, rng: &mut SeededRng) -> Result<Vec<&Transition>> {
        let idx = self.sample_indices(batch, rng)?;
        Ok(idx.into_iter().map(|i| &self.items[i]).collect())
    }

    pub(crate) fn raw_items(&self) -> (&[Transition], usize) {
        (&self.items, self.head)
    }

    pub(crate) fn restore_raw(&mut self, items: Vec<Transition>, head: usize) {
        self.items = items;
        self.head = head;
    }
}

/// `(s, a, s')` triples for dynamics-model training. Kept deliberately
/// smaller than the replay buffer so its distribution tracks recent policy
/// behavior.
#[derive(Debug, Clone)]
pub struct ModelBuffer {
    inner: ReplayBuffer,
}

impl ModelBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        Ok(ModelBuffer {
            inner: ReplayBuffer::new(capacity)?,
        })
    }

    pub fn capacity(&self) -> usize {
        self.inner.capacity()
    }

    pub fn len(&self) -> usize {
        self.inner.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inner.is_empty()
    }

    pub fn push(&mut self, state: Vec<f64>, action: Vec<f64>, next_state: Vec<f64>) {
        self.inner.push(Transition {
            state,
            action,
            reward: 0.0,
            next_state,
        });
    }

    pub fn get_ordered(&self, i: usize) -> (&[f64], &[f64], &[f64]) {
        let t = self.inner.get_ordered(i);
        (&t.state, &t.action, &t.next_state)
    }

    pub(crate) fn raw(&self) -> &ReplayBuffer {
        &self.inner
    }

    pub(crate) fn raw_mut(&mut self) -> &mut ReplayBuffer {
        &mut self.inner
    }
}

/// State-only expert trajectories. There is deliberately no accessor for
/// actions or rewards: none are stored.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpertDataset {
    dim: usize,
    trajectories: Vec<Vec<Vec<f64>>>,
}

impl ExpertDataset {
    pub fn new(dim: usize, trajectories: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("expert state dim must be positive".into()));
        }
        for (ti, traj) in trajectories.iter().enumerate() {
            for (si, s) in traj.iter().enumerate() {
                if s.len() != dim {
                    return Err(Error::Config(format!(
                        "trajectory {ti} state {si} has dim {} but dataset dim is {dim}",
                        s.len()
                    )));
                }
            }
        }
        Ok(ExpertDataset { dim, trajectories })
    }

    pub fn empty(dim: usize) -> Self {
        ExpertDataset {
            dim,
            trajectories: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn trajectories(&self) -> &[Vec<Vec<f64>>] {
        &self.trajectories
    }

    /// Total number of stored states, the `N` of the dataset.
    pub fn state_count(&self) -> usize {
        self.trajectories.iter().map(|t| t.len()).sum()
    }

    /// Number of consecutive `(s_t, s_{t+1})` positions; never counts pairs
    /// across a trajectory boundary.
    pub fn pair_count(&self) -> usize {
        self.trajectories
            .iter()
            .map(|t| t.len().saturating_sub(1))
            .sum()
    }

    /// Pair at flat position `i` over all trajectories.
    pub fn pair_at(&self, mut i: usize) -> (&[f64], &[f64]) {
        for traj in &self.trajectories {
            let pairs = traj.len().saturating_sub(1);
            if i < pairs {
                return (&traj[i], &traj[i + 1]);
            }
            i -= pairs;
        }
        panic!("pair index out of range");
    }

    /// All states flattened, for discrepancy evaluation over the full set.
    pub fn iter_states(&self) -> impl Iterator<Item = &[f64]> {
        self.trajectories.iter().flat_map(|t| t.iter().map(Vec::as_slice))
    }
}

/// Uniformly samples `count` consecutive pairs (with replacement).
pub fn sample_expert_pairs<'d>(
    dataset: &'d ExpertDataset,
    count: usize,
    rng: &mut SeededRng,
) -> Result<Vec<(&'d [f64], &'d [f64])>> {
    let n = dataset.pair_count();
    if n == 0 {
        return Err(Error::Usage(
            "expert dataset has no consecutive state pairs".into(),
        ));
    }
    Ok((0..count).map(|_| dataset.pair_at(rng.index(n))).collect())
}

/// Random partition into two halves of sizes ceil(n/2) and floor(n/2).
pub fn split_pairs<T: Clone>(pairs: &[T], rng: &mut SeededRng) -> (Vec<T>, Vec<T>) {
    let mut idx: Vec<usize> = (0..pairs.len()).collect();
    rng.shuffle(&mut idx);
    let cut = pairs.len().div_ceil(2);
    let first = idx[..cut].iter().map(|&i| pairs[i].clone()).collect();
    let second = idx[cut..].iter().map(|&i| pairs[i].clone()).collect();
    (first, second)
}


#[cfg(test)]
mod proptests {
    use super::*;
    use crate::rng::Stream;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn fifo_always_keeps_the_newest_items(
            capacity in 1usize..64,
            extra in 0usize..128,
        ) {
            let mut buf = ReplayBuffer::new(capacity).unwrap();
            let total = capacity + extra;
            for k in 0..total {
                buf.push(Transition {
                    state: vec![k as f64],
                    action: vec![],
                    reward: k as f64,
                    next_state: vec![],
                });
            }
            prop_assert_eq!(buf.len(), capacity.min(total));
            for i in 0..buf.len() {
                prop_assert_eq!(buf.get_ordered(i).reward, (total - buf.len() + i) as f64);
            }
        }

        #[test]
        fn split_pairs_is_always_a_partition(n in 1usize..200, seed in 0u64..1000) {
            let pairs: Vec<usize> = (0..n).collect();
            let mut rng = SeededRng::new(seed, Stream::Expert);
            let (a, b) = split_pairs(&pairs, &mut rng);
            prop_assert_eq!(a.len(), n.div_ceil(2));
            prop_assert_eq!(b.len(), n / 2);
            let mut all: Vec<usize> = a.iter().chain(b.iter()).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, pairs);
        }
    }
}
