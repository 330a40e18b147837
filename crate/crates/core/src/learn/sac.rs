//! Soft actor-critic and its multi-task variants.
//!
//! All three algorithms share one learner: twin critics with Polyak-averaged
//! targets and a tanh-squashed Gaussian actor. They differ in how tasks are
//! separated:
//!
//! | algorithm | actor heads | temperatures | shared gradient |
//! |-----------|-------------|--------------|-----------------|
//! | `sac`     | 1           | 1            | batch mean      |
//! | `mtmhsac` | one per task| one per task | batch mean      |
//! | `pcgrad`  | 1           | one per task | surgered sum    |
//!
//! In multi-task mode with more than one task, the one-hot task descriptor
//! is appended to actor and critic inputs.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::mlp::{Activation, Mlp, Tape};
use super::optim::{Adam, SparseAdam};
use super::pcgrad::pcgrad_project;
use super::replay::Batch;
use crate::error::{Error, Result};
use crate::rng;
use crate::task::{Action, ACTION_LEN, OBS_LEN};

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;
const LN_2PI: f64 = 1.837_877_066_409_345_5;
const LN_2: f64 = std::f64::consts::LN_2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Sac,
    Mtmhsac,
    Pcgrad,
}

impl Algorithm {
    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::Sac => "sac",
            Algorithm::Mtmhsac => "mtmhsac",
            Algorithm::Pcgrad => "pcgrad",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sac" => Ok(Algorithm::Sac),
            "mtmhsac" => Ok(Algorithm::Mtmhsac),
            "pcgrad" => Ok(Algorithm::Pcgrad),
            _ => Err(Error::Validation(format!("unknown learning algorithm '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SacConfig {
    pub hidden: Vec<usize>,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub alpha_lr: f64,
    pub gamma: f64,
    pub tau: f64,
    pub target_entropy: f64,
    pub initial_log_alpha: f64,
}

impl Default for SacConfig {
    fn default() -> Self {
        SacConfig {
            hidden: vec![400, 400],
            actor_lr: 3e-4,
            critic_lr: 3e-4,
            alpha_lr: 3e-4,
            gamma: 0.99,
            tau: 0.005,
            target_entropy: -(ACTION_LEN as f64),
            initial_log_alpha: 0.0,
        }
    }
}

impl SacConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::Parameter("hidden layer sizes must be positive".into()));
        }
        for (name, lr) in [
            ("actor_lr", self.actor_lr),
            ("critic_lr", self.critic_lr),
            ("alpha_lr", self.alpha_lr),
        ] {
            if !(lr.is_finite() && lr > 0.0) {
                return Err(Error::Parameter(format!("{name} must be positive")));
            }
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Parameter("gamma must lie in [0, 1]".into()));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(Error::Parameter("tau must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

/// Per-update diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UpdateStats {
    /// Mean squared Bellman error, averaged over both critics.
    pub q_loss: f64,
    pub actor_loss: f64,
    /// Temperatures after the update, one per temperature slot.
    pub alpha: Vec<f64>,
    pub mean_log_prob: f64,
}

/// Reparameterized sample from the squashed Gaussian.
struct PolicySample {
    actions: Vec<f64>,
    log_prob: Vec<f64>,
    noise: Vec<f64>,
    log_std: Vec<f64>,
    /// `tanh` of the raw log-std output, kept for its derivative.
    raw_tanh: Vec<f64>,
}

fn log_std_from_raw(raw: f64) -> (f64, f64) {
    let t = raw.tanh();
    (LOG_STD_MIN + 0.5 * (LOG_STD_MAX - LOG_STD_MIN) * (t + 1.0), t)
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// `ln(1 − tanh²u)` without cancellation.
fn log_one_minus_tanh_sq(u: f64) -> f64 {
    2.0 * (LN_2 - u - softplus(-2.0 * u))
}

/// Sample actions from actor outputs (`[mean | raw log-std]` per row) with
/// the given standard-normal noise.
fn squash(output: &[f64], noise: Vec<f64>) -> PolicySample {
    let rows = output.len() / (2 * ACTION_LEN);
    let mut s = PolicySample {
        actions: vec![0.0; rows * ACTION_LEN],
        log_prob: vec![0.0; rows],
        log_std: vec![0.0; rows * ACTION_LEN],
        raw_tanh: vec![0.0; rows * ACTION_LEN],
        noise,
    };
    for r in 0..rows {
        let out = &output[r * 2 * ACTION_LEN..(r + 1) * 2 * ACTION_LEN];
        let mut lp = 0.0;
        for j in 0..ACTION_LEN {
            let k = r * ACTION_LEN + j;
            let (log_std, t) = log_std_from_raw(out[ACTION_LEN + j]);
            let e = s.noise[k];
            let u = out[j] + log_std.exp() * e;
            s.actions[k] = u.tanh();
            s.log_std[k] = log_std;
            s.raw_tanh[k] = t;
            lp += -0.5 * e * e - 0.5 * LN_2PI - log_std - log_one_minus_tanh_sq(u);
        }
        s.log_prob[r] = lp;
    }
    s
}

/// Gradient with respect to actor outputs given `dL/da` and `dL/dlogπ`.
fn squash_backward(s: &PolicySample, d_action: &[f64], d_log_prob: &[f64]) -> Vec<f64> {
    let rows = s.log_prob.len();
    let mut grad = vec![0.0; rows * 2 * ACTION_LEN];
    for r in 0..rows {
        for j in 0..ACTION_LEN {
            let k = r * ACTION_LEN + j;
            let a = s.actions[k];
            let std = s.log_std[k].exp();
            let e = s.noise[k];
            let du = d_action[k] * (1.0 - a * a) + d_log_prob[r] * 2.0 * a;
            let d_log_std = du * std * e - d_log_prob[r];
            let t = s.raw_tanh[k];
            grad[r * 2 * ACTION_LEN + j] = du;
            grad[r * 2 * ACTION_LEN + ACTION_LEN + j] =
                d_log_std * 0.5 * (LOG_STD_MAX - LOG_STD_MIN) * (1.0 - t * t);
        }
    }
    grad
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Flattened parameters and temperatures, keyed by tensor name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct SacLearner {
    algorithm: Algorithm,
    config: SacConfig,
    tasks: usize,
    descriptor: bool,
    actor: Mlp,
    critics: [Mlp; 2],
    targets: [Mlp; 2],
    log_alpha: Vec<f64>,
    actor_opt: Adam,
    critic_opt: [Adam; 2],
    alpha_opt: SparseAdam,
    rng: ChaCha8Rng,
    updates: u64,
}

impl SacLearner {
    /// `tasks` task slots; `descriptor` appends their one-hot code to inputs.
    pub fn new(
        algorithm: Algorithm,
        config: SacConfig,
        tasks: usize,
        descriptor: bool,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        if tasks == 0 {
            return Err(Error::Parameter("a learner needs at least one task".into()));
        }
        let mut init = rng::stream(seed, &[0x1417]);
        let input = OBS_LEN + if descriptor { tasks } else { 0 };
        let heads = if algorithm == Algorithm::Mtmhsac && descriptor {
            tasks
        } else {
            1
        };
        let sizes = |inp: usize, out: usize| {
            let mut v = vec![inp];
            v.extend(&config.hidden);
            v.push(out);
            v
        };
        let actor = Mlp::new(
            &sizes(input, 2 * ACTION_LEN),
            heads,
            Activation::Relu,
            Activation::Identity,
            &mut init,
        )?;
        let critic_sizes = sizes(input + ACTION_LEN, 1);
        let q1 = Mlp::new(&critic_sizes, 1, Activation::Relu, Activation::Identity, &mut init)?;
        let q2 = Mlp::new(&critic_sizes, 1, Activation::Relu, Activation::Identity, &mut init)?;
        let alphas = if algorithm == Algorithm::Sac { 1 } else { tasks };
        Ok(SacLearner {
            algorithm,
            tasks,
            descriptor,
            actor_opt: Adam::new(actor.num_params(), config.actor_lr),
            critic_opt: [
                Adam::new(q1.num_params(), config.critic_lr),
                Adam::new(q2.num_params(), config.critic_lr),
            ],
            alpha_opt: SparseAdam::new(alphas, config.alpha_lr),
            log_alpha: vec![config.initial_log_alpha; alphas],
            targets: [q1.clone(), q2.clone()],
            critics: [q1, q2],
            actor,
            rng: rng::stream(seed, &[0x5ac]),
            updates: 0,
            config,
        })
    }

    pub fn algorithm(&self) -> Algorithm {
        self.algorithm
    }

    pub fn config(&self) -> &SacConfig {
        &self.config
    }

    pub fn tasks(&self) -> usize {
        self.tasks
    }

    pub fn has_descriptor(&self) -> bool {
        self.descriptor
    }

    pub fn actor(&self) -> &Mlp {
        &self.actor
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn alphas(&self) -> Vec<f64> {
        self.log_alpha.iter().map(|l| l.exp()).collect()
    }

    fn alpha_slot(&self, task: usize) -> usize {
        if self.log_alpha.len() == 1 {
            0
        } else {
            task
        }
    }

    fn head(&self, task: usize) -> usize {
        if self.actor.heads() == 1 {
            0
        } else {
            task
        }
    }

    fn actor_input(&self, observations: &[f64], tasks: &[usize]) -> Vec<f64> {
        if !self.descriptor {
            return observations.to_vec();
        }
        let mut out = Vec::with_capacity(tasks.len() * (OBS_LEN + self.tasks));
        for (row, &t) in observations.chunks_exact(OBS_LEN).zip(tasks) {
            out.extend_from_slice(row);
            out.extend((0..self.tasks).map(|k| if k == t { 1.0 } else { 0.0 }));
        }
        out
    }

    fn critic_input(&self, actor_input: &[f64], actions: &[f64]) -> Vec<f64> {
        let width = self.actor.input_len();
        let mut out = Vec::with_capacity(actions.len() / ACTION_LEN * (width + ACTION_LEN));
        for (row, a) in actor_input.chunks_exact(width).zip(actions.chunks_exact(ACTION_LEN)) {
            out.extend_from_slice(row);
            out.extend_from_slice(a);
        }
        out
    }

    fn heads_for(&self, tasks: &[usize]) -> Vec<usize> {
        tasks.iter().map(|&t| self.head(t)).collect()
    }

    fn noise(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.rng.sample(StandardNormal)).collect()
    }

    /// Actions for `observations` (row-major) in task slots `tasks`: the
    /// squashed mean when `deterministic`, a policy sample otherwise.
    pub fn act(&mut self, observations: &[f64], tasks: &[usize], deterministic: bool) -> Result<Vec<Action>> {
        if let Some(t) = tasks.iter().find(|&&t| t >= self.tasks) {
            return Err(Error::Parameter(format!("task slot {t} out of range")));
        }
        let input = self.actor_input(observations, tasks);
        let out = self.actor.forward(&input, &self.heads_for(tasks))?.output().to_vec();
        let rows = tasks.len();
        let noise = if deterministic {
            vec![0.0; rows * ACTION_LEN]
        } else {
            self.noise(rows * ACTION_LEN)
        };
        let s = squash(&out, noise);
        Ok(s
            .actions
            .chunks_exact(ACTION_LEN)
            .map(|c| std::array::from_fn(|j| c[j]))
            .collect())
    }

    /// Per-task temperature gradients; `None` for slots with no samples.
    fn alpha_grads(&self, tasks: &[usize], log_prob: &[f64]) -> Vec<Option<f64>> {
        let mut sum = vec![0.0; self.log_alpha.len()];
        let mut count = vec![0usize; self.log_alpha.len()];
        for (&t, &lp) in tasks.iter().zip(log_prob) {
            let k = self.alpha_slot(t);
            sum[k] += lp + self.config.target_entropy;
            count[k] += 1;
        }
        sum.iter()
            .zip(&count)
            .map(|(&s, &c)| (c > 0).then(|| -s / c as f64))
            .collect()
    }

    /// Parameter gradient of a network, either pooled or surgered across
    /// task slices when running PCGrad.
    fn shared_gradient(&mut self, net: &Mlp, tape: &Tape, out_grad: &[f64], tasks: &[usize]) -> Result<(Vec<f64>, Vec<f64>)> {
        let width = out_grad.len() / tasks.len();
        if self.algorithm != Algorithm::Pcgrad || self.tasks == 1 {
            let mut grad = vec![0.0; net.num_params()];
            let dx = net.backward(tape, out_grad, &mut grad)?;
            return Ok((grad, dx));
        }
        let mut per_task = Vec::new();
        let mut dx = vec![0.0; tape.rows() * net.input_len()];
        for k in 0..self.tasks {
            if !tasks.contains(&k) {
                continue;
            }
            let masked: Vec<f64> = out_grad
                .chunks_exact(width)
                .zip(tasks)
                .flat_map(|(g, &t)| g.iter().map(move |&v| if t == k { v } else { 0.0 }))
                .collect();
            let mut grad = vec![0.0; net.num_params()];
            let dxk = net.backward(tape, &masked, &mut grad)?;
            for (a, b) in dx.iter_mut().zip(&dxk) {
                *a += b;
            }
            per_task.push(grad);
        }
        let seed = self.rng.random::<u64>();
        Ok((pcgrad_project(&per_task, seed)?, dx))
    }

    fn check_finite(&self, what: &str, value: f64, batch: &Batch) -> Result<()> {
        if value.is_finite() {
            return Ok(());
        }
        let (lo, hi) = batch
            .rewards
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &r| (lo.min(r), hi.max(r)));
        let mean = batch.rewards.iter().sum::<f64>() / batch.len() as f64;
        Err(Error::Training(format!(
            "{what} is {value} at update {} (batch of {}, rewards mean {mean:.4} min {lo:.4} max {hi:.4}, alpha {:?})",
            self.updates,
            batch.len(),
            self.alphas()
        )))
    }

    /// One critic, actor, and temperature step followed by target averaging.
    pub fn update(&mut self, batch: &Batch) -> Result<UpdateStats> {
        batch.validate()?;
        if batch.is_empty() {
            return Err(Error::Parameter("empty batch".into()));
        }
        if let Some(t) = batch.tasks.iter().find(|&&t| t >= self.tasks) {
            return Err(Error::Parameter(format!("task slot {t} out of range")));
        }
        let n = batch.len();
        let tasks = &batch.tasks;
        let heads = self.heads_for(tasks);
        let alpha: Vec<f64> = tasks.iter().map(|&t| self.log_alpha[self.alpha_slot(t)].exp()).collect();

        // Critic targets.
        let next_in = self.actor_input(&batch.next_observations, tasks);
        let next_out = self.actor.forward(&next_in, &heads)?.output().to_vec();
        let noise = self.noise(n * ACTION_LEN);
        let next = squash(&next_out, noise);
        let next_q_in = self.critic_input(&next_in, &next.actions);
        let t1 = self.targets[0].predict(&next_q_in)?;
        let t2 = self.targets[1].predict(&next_q_in)?;
        let target: Vec<f64> = (0..n)
            .map(|r| {
                let soft = t1[r].min(t2[r]) - alpha[r] * next.log_prob[r];
                batch.rewards[r] + self.config.gamma * (1.0 - batch.dones[r]) * soft
            })
            .collect();

        // Critic step.
        let obs_in = self.actor_input(&batch.observations, tasks);
        let q_in = self.critic_input(&obs_in, &batch.actions);
        let mut q_loss = 0.0;
        for i in 0..2 {
            let critic = self.critics[i].clone();
            let tape = critic.forward(&q_in, &vec![0; n])?;
            let err: Vec<f64> = tape.output().iter().zip(&target).map(|(q, y)| q - y).collect();
            q_loss += 0.5 * dot(&err, &err) / n as f64;
            let out_grad: Vec<f64> = err.iter().map(|e| 2.0 * e / n as f64).collect();
            let (grad, _) = self.shared_gradient(&critic, &tape, &out_grad, tasks)?;
            self.critic_opt[i].step(self.critics[i].params_mut(), &grad);
        }
        self.check_finite("critic loss", q_loss, batch)?;

        // Actor step through the updated critics.
        let actor = self.actor.clone();
        let tape = actor.forward(&obs_in, &heads)?;
        let noise = self.noise(n * ACTION_LEN);
        let pi = squash(tape.output(), noise);
        let pi_q_in = self.critic_input(&obs_in, &pi.actions);
        let width = self.critics[0].input_len();
        let tapes = [
            self.critics[0].forward(&pi_q_in, &vec![0; n])?,
            self.critics[1].forward(&pi_q_in, &vec![0; n])?,
        ];
        let mut actor_loss = 0.0;
        let mut d_action = vec![0.0; n * ACTION_LEN];
        for (i, critic) in self.critics.iter().enumerate() {
            let mut d_q = vec![0.0; n];
            for r in 0..n {
                let (q1, q2) = (tapes[0].output()[r], tapes[1].output()[r]);
                let pick = if q1 <= q2 { 0 } else { 1 };
                if pick == i {
                    d_q[r] = -1.0 / n as f64;
                    actor_loss += (alpha[r] * pi.log_prob[r] - tapes[i].output()[r]) / n as f64;
                }
            }
            if d_q.iter().all(|&g| g == 0.0) {
                continue;
            }
            let mut scratch = vec![0.0; critic.num_params()];
            let dx = critic.backward(&tapes[i], &d_q, &mut scratch)?;
            for r in 0..n {
                for j in 0..ACTION_LEN {
                    d_action[r * ACTION_LEN + j] += dx[r * width + width - ACTION_LEN + j];
                }
            }
        }
        self.check_finite("actor loss", actor_loss, batch)?;
        let d_log_prob: Vec<f64> = alpha.iter().map(|a| a / n as f64).collect();
        let out_grad = squash_backward(&pi, &d_action, &d_log_prob);
        let (grad, _) = self.shared_gradient(&actor, &tape, &out_grad, tasks)?;
        self.actor_opt.step(self.actor.params_mut(), &grad);

        // Temperatures.
        let alpha_grad = self.alpha_grads(tasks, &pi.log_prob);
        self.alpha_opt.step(&mut self.log_alpha, &alpha_grad);

        for i in 0..2 {
            let source = &self.critics[i];
            self.targets[i].polyak_from(source, self.config.tau);
        }
        self.updates += 1;
        Ok(UpdateStats {
            q_loss,
            actor_loss,
            alpha: self.alphas(),
            mean_log_prob: pi.log_prob.iter().sum::<f64>() / n as f64,
        })
    }

    /// Every network tensor and the log-temperatures.
    pub fn tensors(&self) -> Vec<NamedTensor> {
        let mut out = Vec::new();
        let nets = [
            ("actor", &self.actor),
            ("q1", &self.critics[0]),
            ("q2", &self.critics[1]),
            ("q1_target", &self.targets[0]),
            ("q2_target", &self.targets[1]),
        ];
        for (prefix, net) in nets {
            for (name, shape, data) in net.tensors() {
                out.push(NamedTensor {
                    name: format!("{prefix}.{name}"),
                    shape,
                    data: data.to_vec(),
                });
            }
        }
        out.push(NamedTensor {
            name: "log_alpha".into(),
            shape: vec![self.log_alpha.len()],
            data: self.log_alpha.clone(),
        });
        out
    }

    /// Overwrite parameters from named tensors; names and shapes must match
    /// this learner exactly.
    pub fn load_tensors(&mut self, tensors: &[NamedTensor]) -> Result<()> {
        let expected = self.tensors();
        if expected.len() != tensors.len() {
            return Err(Error::Validation(format!(
                "checkpoint has {} tensors, expected {}",
                tensors.len(),
                expected.len()
            )));
        }
        for (e, t) in expected.iter().zip(tensors) {
            if e.name != t.name || e.shape != t.shape || t.data.len() != e.data.len() {
                return Err(Error::Validation(format!(
                    "checkpoint tensor '{}' {:?} does not match '{}' {:?}",
                    t.name, t.shape, e.name, e.shape
                )));
            }
            if t.data.iter().any(|v| !v.is_finite()) {
                return Err(Error::Validation(format!("checkpoint tensor '{}' is not finite", t.name)));
            }
        }
        let mut it = tensors.iter();
        let mut fill = |net: &mut Mlp| {
            let mut offset = 0;
            for _ in 0..net.tensors().len() {
                let t = it.next().expect("count checked");
                net.params_mut()[offset..offset + t.data.len()].copy_from_slice(&t.data);
                offset += t.data.len();
            }
        };
        fill(&mut self.actor);
        for net in self.critics.iter_mut().chain(self.targets.iter_mut()) {
            fill(net);
        }
        self.log_alpha.copy_from_slice(&it.next().expect("count checked").data);
        Ok(())
    }
}
