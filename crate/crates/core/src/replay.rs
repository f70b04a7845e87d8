//! Replay storage. Rewards are stored raw; any shaping happens at update time.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub x: Vec<f64>,
    pub g: Vec<f64>,
    pub u: Vec<f64>,
    pub r: f64,
    pub x_next: Vec<f64>,
    /// Failure termination only; running out of steps still bootstraps.
    pub done: bool,
}

/// Column-major view of sampled transitions in the training scalar.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch<T> {
    pub len: usize,
    pub x: Vec<T>,
    pub g: Vec<T>,
    pub u: Vec<T>,
    pub r: Vec<T>,
    pub x_next: Vec<T>,
    pub done: Vec<bool>,
}

impl<T: Scalar> Batch<T> {
    pub fn from_transitions<'a>(items: impl IntoIterator<Item = &'a Transition>) -> Self {
        let mut b = Batch {
            len: 0,
            x: Vec::new(),
            g: Vec::new(),
            u: Vec::new(),
            r: Vec::new(),
            x_next: Vec::new(),
            done: Vec::new(),
        };
        let c = |v: &[f64]| v.iter().map(|&a| T::of(a)).collect::<Vec<T>>();
        for t in items {
            b.len += 1;
            b.x.extend(c(&t.x));
            b.g.extend(c(&t.g));
            b.u.extend(c(&t.u));
            b.r.push(T::of(t.r));
            b.x_next.extend(c(&t.x_next));
            b.done.push(t.done);
        }
        b
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

/// Fixed-capacity ring buffer with uniform sampling (with replacement).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    cursor: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("replay capacity must be positive".into()));
        }
        Ok(ReplayBuffer {
            capacity,
            items: Vec::new(),
            cursor: 0,
        })
    }

    /// Rebuilds a buffer from its storage order and write cursor.
    pub fn from_parts(capacity: usize, items: Vec<Transition>, cursor: usize) -> Result<Self> {
        if capacity == 0 || items.len() > capacity || cursor >= capacity {
            return Err(Error::Format(format!(
                "inconsistent replay state: capacity {capacity}, {} items, cursor {cursor}",
                items.len()
            )));
        }
        if items.len() < capacity && cursor != items.len() % capacity {
            return Err(Error::Format("replay cursor does not follow a partial buffer".into()));
        }
        Ok(ReplayBuffer {
            capacity,
            items,
            cursor,
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

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    pub fn push(&mut self, t: Transition) -> Result<()> {
        if !t.r.is_finite() {
            return Err(Error::Numeric(format!("non-finite reward {}", t.r)));
        }
        if let Some(first) = self.items.first() {
            check_len(first.x.len(), t.x.len(), "transition state")?;
            check_len(first.g.len(), t.g.len(), "transition goal")?;
            check_len(first.u.len(), t.u.len(), "transition action")?;
        }
        check_len(t.x.len(), t.x_next.len(), "transition next state")?;
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.cursor] = t;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
        Ok(())
    }

    pub fn get(&self, i: usize) -> Option<&Transition> {
        self.items.get(i)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items.iter()
    }

    pub fn sample_indices<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Result<Vec<usize>> {
        if self.items.is_empty() {
            return Err(Error::Usage("cannot sample from an empty replay buffer".into()));
        }
        Ok((0..n).map(|_| rng.gen_range(0..self.items.len())).collect())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Result<Vec<&Transition>> {
        Ok(self
            .sample_indices(rng, n)?
            .into_iter()
            .map(|i| &self.items[i])
            .collect())
    }

    pub fn sample_batch<T: Scalar, R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Result<Batch<T>> {
        Ok(Batch::from_transitions(self.sample(rng, n)?))
    }
}
