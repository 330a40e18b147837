use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::task::{Action, Observation, ACTION_LEN, OBS_LEN};

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub observation: Observation,
    pub action: Action,
    pub reward: f64,
    pub next_observation: Observation,
    pub done: bool,
    pub task: usize,
}

/// A sampled minibatch in row-major form.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Batch {
    pub observations: Vec<f64>,
    pub actions: Vec<f64>,
    pub rewards: Vec<f64>,
    pub next_observations: Vec<f64>,
    pub dones: Vec<f64>,
    pub tasks: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn push(&mut self, t: &Transition) {
        self.observations.extend_from_slice(t.observation.as_slice());
        self.actions.extend_from_slice(&t.action);
        self.rewards.push(t.reward);
        self.next_observations.extend_from_slice(t.next_observation.as_slice());
        self.dones.push(if t.done { 1.0 } else { 0.0 });
        self.tasks.push(t.task);
    }

    /// Rows belonging to `task`, in batch order.
    pub fn rows_of(&self, task: usize) -> Vec<usize> {
        (0..self.len()).filter(|&r| self.tasks[r] == task).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if self.observations.len() != n * OBS_LEN
            || self.next_observations.len() != n * OBS_LEN
            || self.actions.len() != n * ACTION_LEN
            || self.dones.len() != n
            || self.tasks.len() != n
        {
            return Err(Error::Parameter("batch arrays disagree in length".into()));
        }
        Ok(())
    }
}

/// Per-task FIFO buffers with uniform sampling.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    slots: Vec<Vec<Transition>>,
    cursor: Vec<usize>,
}

impl ReplayBuffer {
    pub fn new(tasks: usize, capacity_per_task: usize) -> Result<Self> {
        if tasks == 0 || capacity_per_task == 0 {
            return Err(Error::Parameter("replay buffer needs a task and a capacity".into()));
        }
        Ok(ReplayBuffer {
            capacity: capacity_per_task,
            slots: vec![Vec::new(); tasks],
            cursor: vec![0; tasks],
        })
    }

    pub fn push(&mut self, t: Transition) {
        let k = t.task;
        if self.slots[k].len() < self.capacity {
            self.slots[k].push(t);
        } else {
            self.slots[k][self.cursor[k]] = t;
            self.cursor[k] = (self.cursor[k] + 1) % self.capacity;
        }
    }

    pub fn len(&self, task: usize) -> usize {
        self.slots[task].len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.iter().all(Vec::is_empty)
    }

    /// `per_task` uniform draws from every non-empty task buffer.
    pub fn sample(&self, per_task: usize, rng: &mut ChaCha8Rng) -> Batch {
        let mut batch = Batch::default();
        for slot in self.slots.iter().filter(|s| !s.is_empty()) {
            for _ in 0..per_task {
                batch.push(&slot[rng.random_range(0..slot.len())]);
            }
        }
        batch
    }
}
