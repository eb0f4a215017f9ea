use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::ppo::{ppo_update, PpoConfig, PpoSample};
use super::rollout::{rollout, Episode, EvalSummary};
use super::{compute_advantages, mix_seed, normalize_advantages, parallel_map, worker_threads};
use super::{CurriculumState, RewardConfig, TrainError};
use crate::agent::{ModelConfig, ModelSpec, PolicyModel, TaskContext};
use crate::encoder::{EncoderConfig, GraphMode};
use crate::neural::Adam;
use crate::worlds::{generate, DomainKind, InstanceSpec};

pub const METRICS_HEADER: &str = "iter,grid_size,train_success,eval_success,eval_mean_reward,mean_plan_len,kl,entropy";

const TAG_INSTANCE: u64 = 0;
const TAG_SIZE: u64 = 1;
const TAG_POLICY: u64 = 2;
const TAG_EVAL: u64 = 0xE7A1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainMode {
    Curriculum,
    Random,
}

impl TrainMode {
    pub fn name(self) -> &'static str {
        match self {
            TrainMode::Curriculum => "curriculum",
            TrainMode::Random => "random",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "curriculum" => Some(TrainMode::Curriculum),
            "random" => Some(TrainMode::Random),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub domain: DomainKind,
    pub mode: TrainMode,
    pub min_size: usize,
    pub max_size: usize,
    pub iters: usize,
    pub seed: u64,
    pub density: f64,
    pub num_targets: usize,
    /// Consecutive successes that grow the curriculum grid.
    pub threshold: usize,
    pub encoder: EncoderConfig,
    pub model: ModelConfig,
    pub ppo: PpoConfig,
    pub reward: RewardConfig,
    pub eval_episodes: usize,
    pub eval_every: usize,
    /// Evaluation grid width; defaults to the current training width.
    pub eval_size: Option<usize>,
    pub checkpoint_every: usize,
    /// Stop once greedy evaluation success reaches this rate.
    pub stop_at_eval_success: Option<f64>,
    /// Worker threads; 0 reads `GPLAN_THREADS`.
    pub threads: usize,
}

impl TrainConfig {
    pub fn new(domain: DomainKind) -> Self {
        let num_targets = match domain {
            DomainKind::Simple => 0,
            DomainKind::Scan => 2,
        };
        TrainConfig {
            domain,
            mode: TrainMode::Curriculum,
            min_size: 5,
            max_size: 9,
            iters: 100,
            seed: 1,
            density: 0.0,
            num_targets,
            threshold: 5,
            encoder: EncoderConfig::sparse(true, num_targets),
            model: ModelConfig::default(),
            ppo: PpoConfig::default(),
            reward: RewardConfig::default(),
            eval_episodes: 20,
            eval_every: 1,
            eval_size: None,
            checkpoint_every: 10,
            stop_at_eval_success: None,
            threads: 0,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.to_string()));
        if self.min_size < 3 || self.max_size < self.min_size {
            return bad("need 3 <= min_size <= max_size");
        }
        if !(self.ppo.gamma > 0.0 && self.ppo.gamma <= 1.0) {
            return bad("gamma must be in (0, 1]");
        }
        if self.ppo.clip.is_nan() || self.ppo.clip <= 0.0 {
            return bad("clip must be positive");
        }
        if self.ppo.episodes_per_iter == 0 {
            return bad("episodes_per_iter must be positive");
        }
        if self.reward.alpha < 0.0
            || self.reward.scan_bonus < 0.0
            || self.reward.goal_reward.is_nan()
            || self.reward.goal_reward <= 0.0
        {
            return bad("reward terms out of range");
        }
        if self.domain == DomainKind::Scan && self.num_targets == 0 {
            return bad("scan training needs targets");
        }
        if self.model.hidden.is_empty() || self.model.latent == 0 || self.model.head_hidden == 0 {
            return bad("empty model widths");
        }
        Ok(())
    }

    pub fn threads(&self) -> usize {
        if self.threads == 0 {
            worker_threads()
        } else {
            self.threads
        }
    }

    pub fn model_spec(&self) -> ModelSpec {
        ModelSpec::for_domain(
            self.domain.domain(),
            self.encoder,
            self.model.clone(),
            self.reward.goal_reward as f32,
        )
    }

    pub fn instance_spec(&self, width: usize, seed: u64) -> InstanceSpec {
        match self.domain {
            DomainKind::Simple => InstanceSpec::simple(width, self.density, seed),
            DomainKind::Scan => InstanceSpec::scan(width, self.density, self.num_targets, seed),
        }
    }

    /// Flat `key=value` snapshot, one key per line.
    pub fn to_snapshot(&self) -> String {
        let hidden = self
            .model
            .hidden
            .iter()
            .map(|h| h.to_string())
            .collect::<Vec<_>>()
            .join(",");
        let opt = |v: Option<String>| v.unwrap_or_else(|| "none".into());
        let p = &self.ppo;
        let r = &self.reward;
        let lines = [
            ("version", env!("CARGO_PKG_VERSION").to_string()),
            ("domain", self.domain.name().into()),
            ("mode", self.mode.name().into()),
            ("min_size", self.min_size.to_string()),
            ("max_size", self.max_size.to_string()),
            ("iters", self.iters.to_string()),
            ("seed", self.seed.to_string()),
            ("density", self.density.to_string()),
            ("num_targets", self.num_targets.to_string()),
            ("threshold", self.threshold.to_string()),
            ("graph", self.encoder.mode.name().into()),
            ("goal_aware", self.encoder.goal_aware.to_string()),
            ("max_targets", self.encoder.max_targets.to_string()),
            ("hidden", hidden),
            ("latent", self.model.latent.to_string()),
            ("head_hidden", self.model.head_hidden.to_string()),
            ("blocks", self.model.num_blocks.to_string()),
            ("lr", p.lr.to_string()),
            ("gamma", p.gamma.to_string()),
            ("gae_lambda", p.gae_lambda.to_string()),
            ("clip", p.clip.to_string()),
            ("entropy_coef", p.entropy_coef.to_string()),
            ("value_coef", p.value_coef.to_string()),
            ("kl_cutoff", p.kl_cutoff.to_string()),
            ("epochs", p.epochs.to_string()),
            ("episodes_per_iter", p.episodes_per_iter.to_string()),
            ("chunk_size", p.chunk_size.to_string()),
            ("max_grad_norm", p.max_grad_norm.to_string()),
            ("alpha", r.alpha.to_string()),
            ("scan_bonus", r.scan_bonus.to_string()),
            ("goal_reward", r.goal_reward.to_string()),
            ("step_limit_factor", r.step_limit_factor.to_string()),
            ("eval_episodes", self.eval_episodes.to_string()),
            ("eval_every", self.eval_every.to_string()),
            ("eval_size", opt(self.eval_size.map(|v| v.to_string()))),
            ("checkpoint_every", self.checkpoint_every.to_string()),
            (
                "stop_at_eval_success",
                opt(self.stop_at_eval_success.map(|v| v.to_string())),
            ),
            ("threads", self.threads.to_string()),
        ];
        lines.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    /// Inverse of [`TrainConfig::to_snapshot`]; missing keys keep defaults.
    pub fn from_snapshot(text: &str) -> Result<Self, TrainError> {
        let mut kv = HashMap::new();
        for line in text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
        {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| TrainError::InvalidConfig(format!("line without `=`: {line}")))?;
            kv.insert(k.trim().to_string(), v.trim().to_string());
        }
        let domain = match kv.get("domain") {
            Some(d) => DomainKind::from_name(d).ok_or_else(|| TrainError::InvalidConfig(format!("domain {d}")))?,
            None => DomainKind::Simple,
        };
        let mut c = TrainConfig::new(domain);
        for (k, v) in &kv {
            c.set(k, v)?;
        }
        Ok(c)
    }

    /// Sets one snapshot key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), TrainError> {
        fn num<T: std::str::FromStr>(k: &str, v: &str) -> Result<T, TrainError> {
            v.parse()
                .map_err(|_| TrainError::InvalidConfig(format!("bad value for {k}: {v}")))
        }
        fn opt<T: std::str::FromStr>(k: &str, v: &str) -> Result<Option<T>, TrainError> {
            if v == "none" {
                Ok(None)
            } else {
                num(k, v).map(Some)
            }
        }
        let (k, v) = (key, value);
        match k {
            "version" => {}
            "domain" => {
                self.domain =
                    DomainKind::from_name(v).ok_or_else(|| TrainError::InvalidConfig(format!("domain {v}")))?
            }
            "mode" => {
                self.mode = TrainMode::from_name(v).ok_or_else(|| TrainError::InvalidConfig(format!("mode {v}")))?
            }
            "min_size" => self.min_size = num(k, v)?,
            "max_size" => self.max_size = num(k, v)?,
            "iters" => self.iters = num(k, v)?,
            "seed" => self.seed = num(k, v)?,
            "density" => self.density = num(k, v)?,
            "num_targets" => self.num_targets = num(k, v)?,
            "threshold" => self.threshold = num(k, v)?,
            "graph" => {
                self.encoder.mode = match v {
                    "sparse" => GraphMode::Sparse,
                    "dense" => GraphMode::Dense,
                    _ => return Err(TrainError::InvalidConfig(format!("graph {v}"))),
                }
            }
            "goal_aware" => self.encoder.goal_aware = num(k, v)?,
            "max_targets" => self.encoder.max_targets = num(k, v)?,
            "hidden" => {
                self.model.hidden = v
                    .split(',')
                    .filter(|s| !s.is_empty())
                    .map(|s| num(k, s))
                    .collect::<Result<_, _>>()?
            }
            "latent" => self.model.latent = num(k, v)?,
            "head_hidden" => self.model.head_hidden = num(k, v)?,
            "blocks" => self.model.num_blocks = num(k, v)?,
            "lr" => self.ppo.lr = num(k, v)?,
            "gamma" => self.ppo.gamma = num(k, v)?,
            "gae_lambda" => self.ppo.gae_lambda = num(k, v)?,
            "clip" => self.ppo.clip = num(k, v)?,
            "entropy_coef" => self.ppo.entropy_coef = num(k, v)?,
            "value_coef" => self.ppo.value_coef = num(k, v)?,
            "kl_cutoff" => self.ppo.kl_cutoff = num(k, v)?,
            "epochs" => self.ppo.epochs = num(k, v)?,
            "episodes_per_iter" => self.ppo.episodes_per_iter = num(k, v)?,
            "chunk_size" => self.ppo.chunk_size = num(k, v)?,
            "max_grad_norm" => self.ppo.max_grad_norm = num(k, v)?,
            "alpha" => self.reward.alpha = num(k, v)?,
            "scan_bonus" => self.reward.scan_bonus = num(k, v)?,
            "goal_reward" => self.reward.goal_reward = num(k, v)?,
            "step_limit_factor" => self.reward.step_limit_factor = num(k, v)?,
            "eval_episodes" => self.eval_episodes = num(k, v)?,
            "eval_every" => self.eval_every = num(k, v)?,
            "eval_size" => self.eval_size = opt(k, v)?,
            "checkpoint_every" => self.checkpoint_every = num(k, v)?,
            "stop_at_eval_success" => self.stop_at_eval_success = opt(k, v)?,
            "threads" => self.threads = num(k, v)?,
            _ => return Err(TrainError::InvalidConfig(format!("unknown key {k}"))),
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct IterationStats {
    pub iter: usize,
    /// Curriculum width at the start of the iteration (max width in random mode).
    pub grid_size: usize,
    pub train_success: f64,
    pub eval_success: f64,
    pub eval_mean_reward: f64,
    pub mean_plan_len: f64,
    pub kl: f64,
    pub entropy: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub epochs_ran: usize,
    pub episodes: usize,
    /// Environment steps so far, all iterations included.
    pub env_steps: u64,
}

impl IterationStats {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{:.4},{:.4},{:.4},{:.4},{:.6},{:.6}",
            self.iter,
            self.grid_size,
            self.train_success,
            self.eval_success,
            self.eval_mean_reward,
            self.mean_plan_len,
            self.kl,
            self.entropy
        )
    }
}

pub struct Trainer {
    pub config: TrainConfig,
    pub model: PolicyModel,
    pub curriculum: CurriculumState,
    pub history: Vec<IterationStats>,
    pub env_steps: u64,
    adam: Adam,
    iter: usize,
    last_eval: EvalSummary,
    run_dir: Option<PathBuf>,
    metrics: Option<BufWriter<File>>,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self, TrainError> {
        config.validate()?;
        let model = PolicyModel::new(config.model_spec(), config.seed);
        let adam = Adam::new(&model.store, config.ppo.lr);
        let curriculum = CurriculumState::new(config.min_size, config.max_size, config.threshold);
        Ok(Trainer {
            config,
            model,
            curriculum,
            history: Vec::new(),
            env_steps: 0,
            adam,
            iter: 0,
            last_eval: EvalSummary::default(),
            run_dir: None,
            metrics: None,
        })
    }

    /// Like [`Trainer::new`], persisting the config snapshot, metrics and
    /// checkpoints under `dir`.
    pub fn with_run_dir(config: TrainConfig, dir: &Path) -> Result<Self, TrainError> {
        let mut t = Trainer::new(config)?;
        fs::create_dir_all(dir)?;
        fs::write(dir.join("config.txt"), t.config.to_snapshot())?;
        let mut w = BufWriter::new(File::create(dir.join("metrics.csv"))?);
        writeln!(w, "{METRICS_HEADER}")?;
        w.flush()?;
        t.metrics = Some(w);
        t.run_dir = Some(dir.to_path_buf());
        Ok(t)
    }

    pub fn iterations_done(&self) -> usize {
        self.iter
    }

    fn episode_size(&self, ep_seed: u64) -> usize {
        match self.config.mode {
            TrainMode::Curriculum => self.curriculum.current_size(),
            TrainMode::Random => {
                let span = (self.config.max_size - self.config.min_size + 1) as u64;
                self.config.min_size + (mix_seed(&[ep_seed, TAG_SIZE]) % span) as usize
            }
        }
    }

    fn run_episode(&self, size: usize, ep_seed: u64) -> Result<Episode, TrainError> {
        let inst = generate(
            self.config.domain,
            &self.config.instance_spec(size, mix_seed(&[ep_seed, TAG_INSTANCE])),
        )?;
        let ctx = Arc::new(TaskContext::for_model(&inst.task, &self.model.spec)?);
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[ep_seed, TAG_POLICY]));
        Ok(rollout(
            &self.model,
            &inst.task,
            ctx,
            &self.config.reward,
            Some(&mut rng),
            true,
        )?)
    }

    /// Greedy episodes on fresh instances of width `size`.
    pub fn evaluate(&self, size: usize, count: usize, tag: u64) -> Result<EvalSummary, TrainError> {
        let threads = self.config.threads();
        let eps = parallel_map(count, threads, |i| -> Result<Episode, TrainError> {
            let seed = mix_seed(&[self.config.seed, TAG_EVAL, tag, i as u64]);
            let inst = generate(self.config.domain, &self.config.instance_spec(size, seed))?;
            let ctx = Arc::new(TaskContext::for_model(&inst.task, &self.model.spec)?);
            Ok(rollout(&self.model, &inst.task, ctx, &self.config.reward, None, false)?)
        });
        let eps = eps.into_iter().collect::<Result<Vec<_>, _>>()?;
        Ok(EvalSummary::from_episodes(&eps))
    }

    /// Collect rollouts, update the curriculum, run PPO, evaluate, and log.
    pub fn run_iteration(&mut self) -> Result<IterationStats, TrainError> {
        let cfg = &self.config;
        let iter = self.iter;
        let threads = cfg.threads();
        let grid_size = match cfg.mode {
            TrainMode::Curriculum => self.curriculum.current_size(),
            TrainMode::Random => cfg.max_size,
        };
        let total = cfg.ppo.episodes_per_iter;
        let mut episodes = Vec::with_capacity(total);
        // Each wave runs at one curriculum width; outcomes are folded into
        // the curriculum in episode order before the next wave starts.
        while episodes.len() < total {
            let start = episodes.len();
            let n = threads.min(total - start);
            let seeds: Vec<(usize, u64)> = (start..start + n)
                .map(|e| {
                    let s = mix_seed(&[self.config.seed, iter as u64, e as u64]);
                    (self.episode_size(s), s)
                })
                .collect();
            let wave = parallel_map(n, threads, |i| self.run_episode(seeds[i].0, seeds[i].1));
            for ep in wave {
                let ep = ep?;
                if self.config.mode == TrainMode::Curriculum {
                    self.curriculum = self.curriculum.update(ep.success);
                }
                episodes.push(ep);
            }
        }

        let cfg = &self.config;
        let mut samples = Vec::new();
        let mut successes = 0;
        for ep in &episodes {
            successes += usize::from(ep.success);
            self.env_steps += ep.len() as u64;
            let rewards: Vec<f64> = ep.steps.iter().map(|s| s.reward).collect();
            let values: Vec<f64> = ep.steps.iter().map(|s| s.value).collect();
            let (adv, ret) = compute_advantages(&rewards, &values, ep.bootstrap, cfg.ppo.gamma, cfg.ppo.gae_lambda);
            for (i, s) in ep.steps.iter().enumerate() {
                samples.push(PpoSample {
                    ctx: ep.ctx.clone(),
                    graph: s.graph.clone(),
                    actions: s.actions.clone(),
                    chosen: s.chosen,
                    old_log_prob: s.log_prob,
                    advantage: adv[i],
                    ret: ret[i],
                });
            }
        }
        drop(episodes);
        let mut adv: Vec<f64> = samples.iter().map(|s| s.advantage).collect();
        normalize_advantages(&mut adv);
        samples.iter_mut().zip(adv).for_each(|(s, a)| s.advantage = a);

        let ppo = if samples.is_empty() {
            Default::default()
        } else {
            ppo_update(&mut self.model, &mut self.adam, &samples, &self.config.ppo)?
        };
        drop(samples);

        let cfg = &self.config;
        if cfg.eval_every > 0 && cfg.eval_episodes > 0 && (iter + 1).is_multiple_of(cfg.eval_every) {
            let size = cfg.eval_size.unwrap_or(match cfg.mode {
                TrainMode::Curriculum => self.curriculum.current_size(),
                TrainMode::Random => cfg.max_size,
            });
            self.last_eval = self.evaluate(size, cfg.eval_episodes, iter as u64)?;
        }
        let stats = IterationStats {
            iter,
            grid_size,
            train_success: successes as f64 / total as f64,
            eval_success: self.last_eval.success_rate,
            eval_mean_reward: self.last_eval.mean_reward,
            mean_plan_len: self.last_eval.mean_plan_len,
            kl: ppo.approx_kl,
            entropy: ppo.entropy,
            policy_loss: ppo.policy_loss,
            value_loss: ppo.value_loss,
            epochs_ran: ppo.epochs_ran,
            episodes: total,
            env_steps: self.env_steps,
        };
        self.iter += 1;
        self.history.push(stats);
        if let Some(w) = self.metrics.as_mut() {
            writeln!(w, "{}", stats.csv_row())?;
            w.flush()?;
        }
        if let Some(dir) = &self.run_dir {
            if self.config.checkpoint_every > 0 && self.iter.is_multiple_of(self.config.checkpoint_every) {
                self.model
                    .save(&dir.join(format!("checkpoint-{:04}.ckpt", self.iter)))?;
            }
        }
        Ok(stats)
    }

    /// Runs the remaining iterations (or until the eval target is met) and
    /// writes the final checkpoint.
    pub fn run(&mut self) -> Result<&[IterationStats], TrainError> {
        while self.iter < self.config.iters {
            let s = self.run_iteration()?;
            if self.config.stop_at_eval_success.is_some_and(|t| s.eval_success >= t) {
                break;
            }
        }
        if let Some(dir) = &self.run_dir {
            self.model.save(&dir.join("final.ckpt"))?;
        }
        Ok(&self.history)
    }
}
