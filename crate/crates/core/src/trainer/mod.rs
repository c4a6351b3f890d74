//! The outer training loop: regularizer and learned policy blended through
//! the focus weight, replay storage, and the per-step update bundle. The
//! same loop runs the MPC-only and SAC-only baselines by switching pieces off.

use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::envs::{Env, EnvConfig, ParamRole, PlantKind, PlantParams};
use crate::error::{Error, Result};
use crate::focus::{blend, FocusConfig, FocusModule, PretrainReport};
use crate::regularizer::{MpcConfig, MpcProblem, Regularizer};
use crate::replay::{ReplayBuffer, Transition};
use crate::sac::{SacAgent, SacConfig};

const CHECKPOINT_VERSION: u32 = 1;

fn default_model_role() -> ParamRole {
    ParamRole::Estimated
}

fn default_plant_role() -> ParamRole {
    ParamRole::Actual
}

fn default_episodes() -> usize {
    20
}

fn default_capacity() -> usize {
    1_000_000
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainerConfig {
    pub plant: PlantKind,
    /// Preset the regularizer plans on.
    #[serde(default = "default_model_role")]
    pub model_role: ParamRole,
    /// Preset the episodes step.
    #[serde(default = "default_plant_role")]
    pub plant_role: ParamRole,
    /// Multipliers applied on top of the stepping preset.
    #[serde(default)]
    pub plant_perturb: BTreeMap<String, f64>,
    /// Per-plant defaults when absent.
    #[serde(default)]
    pub env: Option<EnvConfig>,
    #[serde(default)]
    pub mpc: Option<MpcConfig>,
    #[serde(default)]
    pub sac: SacConfig,
    #[serde(default)]
    pub focus: FocusConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_episodes")]
    pub episodes: usize,
    #[serde(default = "default_capacity")]
    pub buffer_capacity: usize,
    #[serde(default)]
    pub scalar_beta: bool,
    #[serde(default)]
    pub disable_regularizer: bool,
    #[serde(default)]
    pub disable_learning: bool,
    /// Episodes between checkpoints; zero disables them.
    #[serde(default)]
    pub checkpoint_every: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    RlAr,
    MpcOnly,
    SacOnly,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::RlAr => "rl-ar",
            Mode::MpcOnly => "mpc-only",
            Mode::SacOnly => "sac-only",
        }
    }
}

impl TrainerConfig {
    pub fn new(plant: PlantKind) -> Self {
        Self {
            plant,
            model_role: ParamRole::Estimated,
            plant_role: ParamRole::Actual,
            plant_perturb: BTreeMap::new(),
            env: None,
            mpc: None,
            sac: SacConfig::default(),
            focus: FocusConfig::default(),
            seed: 0,
            episodes: default_episodes(),
            buffer_capacity: default_capacity(),
            scalar_beta: false,
            disable_regularizer: false,
            disable_learning: false,
            checkpoint_every: 0,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("config does not serialize: {e}")))
    }

    pub fn mode(&self) -> Mode {
        match (self.disable_regularizer, self.disable_learning) {
            (false, false) => Mode::RlAr,
            (false, true) => Mode::MpcOnly,
            _ => Mode::SacOnly,
        }
    }

    pub fn env_config(&self) -> EnvConfig {
        self.env.clone().unwrap_or_else(|| EnvConfig::default_for(self.plant))
    }

    pub fn mpc_config(&self) -> MpcConfig {
        self.mpc.clone().unwrap_or_else(|| MpcConfig::default_for(self.plant))
    }

    pub fn focus_config(&self) -> FocusConfig {
        FocusConfig {
            scalar: self.scalar_beta || self.focus.scalar,
            ..self.focus.clone()
        }
    }

    pub fn model_params(&self) -> PlantParams {
        PlantParams::preset(self.plant, self.model_role)
    }

    pub fn plant_params(&self) -> Result<PlantParams> {
        PlantParams::preset(self.plant, self.plant_role).perturb(&self.plant_perturb)
    }

    pub fn validate(&self) -> Result<()> {
        if self.disable_regularizer && self.disable_learning {
            return Err(Error::Config("regularizer and learning cannot both be disabled".into()));
        }
        if self.episodes == 0 {
            return Err(Error::Config("episodes must be positive".into()));
        }
        if self.buffer_capacity == 0 {
            return Err(Error::Config("buffer_capacity must be positive".into()));
        }
        let plant = self.plant_params()?;
        self.env_config().validate(&plant)?;
        self.mpc_config().validate()?;
        self.sac.validate()?;
        self.focus_config().validate()?;
        Ok(())
    }
}

/// One line of the per-episode log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub episode: usize,
    pub steps: usize,
    #[serde(rename = "return")]
    pub total_return: f64,
    pub normalized_return: f64,
    pub failed: bool,
    pub mean_beta: f64,
    pub mpc_iterations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub t: f64,
    /// Plant state after the step.
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub reg_action: Option<Vec<f64>>,
    pub rl_action: Option<Vec<f64>>,
    pub beta: Vec<f64>,
    pub reward: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeLog {
    pub record: RunRecord,
    pub initial_state: Vec<f64>,
    pub steps: Vec<StepLog>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config: TrainerConfig,
    pub episodes_done: usize,
    pub agent: Option<serde_json::Value>,
    pub focus: Option<FocusModule>,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ck: Self = serde_json::from_slice(&std::fs::read(path)?)?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported checkpoint version {}", ck.version)));
        }
        Ok(ck)
    }
}

pub struct Trainer {
    config: TrainerConfig,
    env: Env,
    regularizer: Option<Regularizer>,
    agent: Option<SacAgent>,
    focus: Option<FocusModule>,
    buffer: ReplayBuffer,
    rng: ChaCha8Rng,
    episodes_done: usize,
    pretrain: Option<PretrainReport>,
}

impl Trainer {
    /// Builds every piece the mode needs and, with the full method,
    /// pretrains the focus module. Random draws happen in the order agent,
    /// focus, pretraining, then the episodes.
    pub fn new(config: TrainerConfig) -> Result<Self> {
        Self::build(config, true)
    }

    fn build(config: TrainerConfig, pretrain_focus: bool) -> Result<Self> {
        config.validate()?;
        let env_cfg = config.env_config();
        let env = Env::new(config.plant_params()?, env_cfg.clone())?;
        let obs_dim = env.params().observation_dim();
        let mode = config.mode();
        let regularizer = match mode {
            Mode::SacOnly => None,
            _ => Some(Regularizer::new(MpcProblem::new(
                config.model_params(),
                &env_cfg,
                config.mpc_config(),
            )?)?),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let agent = match mode {
            Mode::MpcOnly => None,
            _ => Some(SacAgent::new(obs_dim, env_cfg.actions.clone(), config.sac.clone(), &mut rng)?),
        };
        let (mut focus, mut pretrain) = (None, None);
        if mode == Mode::RlAr {
            let mut module = FocusModule::new(obs_dim, env_cfg.actions.dim(), config.focus_config(), &mut rng)?;
            if pretrain_focus {
                pretrain = Some(module.pretrain(obs_dim, &mut rng)?);
            }
            focus = Some(module);
        }
        Ok(Self {
            buffer: ReplayBuffer::new(config.buffer_capacity)?,
            config,
            env,
            regularizer,
            agent,
            focus,
            rng,
            episodes_done: 0,
            pretrain,
        })
    }

    /// Rebuilds a trainer around the learned pieces of a checkpoint.
    pub fn restore(config: TrainerConfig, checkpoint: &Checkpoint) -> Result<Self> {
        let c = &checkpoint.config;
        if c.plant != config.plant
            || c.disable_regularizer != config.disable_regularizer
            || c.disable_learning != config.disable_learning
            || c.scalar_beta != config.scalar_beta
        {
            return Err(Error::Config(format!(
                "checkpoint was written for {} {}, config asks for {} {}",
                c.plant,
                c.mode().name(),
                config.plant,
                config.mode().name()
            )));
        }
        let mut trainer = Self::build(config, false)?;
        let obs_dim = trainer.env.params().observation_dim();
        let act_dim = trainer.env.config().actions.dim();
        match (&mut trainer.agent, &checkpoint.agent) {
            (Some(slot), Some(value)) => {
                let agent = SacAgent::from_json(&value.to_string())?;
                if agent.obs_dim() != obs_dim || agent.actions() != &trainer.env.config().actions {
                    return Err(Error::Config("checkpoint agent does not fit this plant".into()));
                }
                *slot = agent;
            }
            (None, None) => {}
            _ => return Err(Error::Config("checkpoint agent presence does not match the mode".into())),
        }
        match (&mut trainer.focus, &checkpoint.focus) {
            (Some(slot), Some(focus)) => {
                let probe = vec![0.0; obs_dim];
                if focus.net().act_dim() != act_dim || focus.beta(&probe).is_err() {
                    return Err(Error::Config("checkpoint focus net does not fit this plant".into()));
                }
                *slot = focus.clone();
            }
            (None, None) => {}
            _ => return Err(Error::Config("checkpoint focus presence does not match the mode".into())),
        }
        trainer.episodes_done = checkpoint.episodes_done;
        Ok(trainer)
    }

    pub fn config(&self) -> &TrainerConfig {
        &self.config
    }

    pub fn mode(&self) -> Mode {
        self.config.mode()
    }

    pub fn agent(&self) -> Option<&SacAgent> {
        self.agent.as_ref()
    }

    pub fn focus(&self) -> Option<&FocusModule> {
        self.focus.as_ref()
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    pub fn episodes_done(&self) -> usize {
        self.episodes_done
    }

    pub fn pretrain_report(&self) -> Option<&PretrainReport> {
        self.pretrain.as_ref()
    }

    pub fn checkpoint(&self) -> Result<Checkpoint> {
        Ok(Checkpoint {
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            episodes_done: self.episodes_done,
            agent: match &self.agent {
                Some(a) => Some(serde_json::from_str(&a.to_json()?)?),
                None => None,
            },
            focus: self.focus.clone(),
        })
    }

    /// Runs the configured number of training episodes, handing each log to
    /// `sink` as soon as it is complete. An error from any module ends the
    /// run; episodes already handed over stay with the caller.
    pub fn train<F>(&mut self, mut sink: F) -> Result<Vec<RunRecord>>
    where
        F: FnMut(&EpisodeLog) -> Result<()>,
    {
        let mut records = Vec::with_capacity(self.config.episodes);
        for _ in 0..self.config.episodes {
            let log = self.run_episode(true)?;
            sink(&log)?;
            records.push(log.record);
        }
        Ok(records)
    }

    /// One training episode.
    pub fn train_episode(&mut self) -> Result<EpisodeLog> {
        self.run_episode(true)
    }

    /// One episode with the squashed policy mean, no storage and no updates.
    pub fn evaluate(&mut self) -> Result<EpisodeLog> {
        self.run_episode(false)
    }

    fn run_episode(&mut self, learn: bool) -> Result<EpisodeLog> {
        let episode = self.episodes_done;
        let result = self.episode_inner(learn, episode);
        match &result {
            Ok(_) if learn => self.episodes_done += 1,
            Ok(_) => {}
            Err(e) => log::error!(
                "{} on {} aborted in episode {episode} (seed {}): {e}",
                self.mode().name(),
                self.config.plant,
                self.config.seed
            ),
        }
        result
    }

    fn episode_inner(&mut self, learn: bool, episode: usize) -> Result<EpisodeLog> {
        let actions = self.env.config().actions.clone();
        let scaling = self.env.config().obs_scaling.clone();
        let k = actions.dim();
        let mut obs_raw = self.env.reset()?;
        let initial_state = self.env.state().x.clone();
        if let Some(reg) = &mut self.regularizer {
            reg.reset(&obs_raw)?;
        }
        let mut steps = Vec::new();
        let (mut total, mut beta_sum, mut iterations, mut failed) = (0.0, 0.0, 0usize, false);
        loop {
            let obs = scaling.apply(&obs_raw);
            let reg_step = match &mut self.regularizer {
                Some(reg) => Some(reg.act(&obs_raw)?),
                None => None,
            };
            let a_rl = match &self.agent {
                Some(agent) => Some(agent.act(&obs, !learn, &mut self.rng)?.action),
                None => None,
            };
            let (action, beta) = match (&reg_step, &a_rl, &self.focus) {
                (Some(r), Some(rl), Some(focus)) => {
                    let beta = focus.beta(&obs)?;
                    (blend(&beta, &r.action, rl, &actions), beta)
                }
                (Some(r), None, _) => (r.action.clone(), vec![1.0; k]),
                (None, Some(rl), _) => (rl.clone(), vec![0.0; k]),
                _ => unreachable!("validated modes always have an action source"),
            };
            if !actions.contains(&action) {
                return Err(Error::Config(format!("executed action {action:?} left the admissible box")));
            }
            let out = self.env.step(&action)?;
            if let Some(reg) = &mut self.regularizer {
                reg.advance(&action)?;
            }
            let reg_action = reg_step.as_ref().map(|r| r.action.clone());
            if let Some(r) = &reg_step {
                iterations += r.iterations;
            }
            total += out.reward;
            beta_sum += beta.iter().sum::<f64>() / k as f64;
            failed |= out.failed;
            if learn && self.agent.is_some() {
                let mut next_obs = scaling.apply(&out.observation);
                // a diverged plant ends the episode; the terminal flag zeroes
                // the bootstrap, but the stored row must stay finite
                if next_obs.iter().any(|v| !v.is_finite()) {
                    next_obs = obs.clone();
                }
                self.buffer.push(Transition {
                    obs: obs.clone(),
                    action: action.clone(),
                    next_obs,
                    reward: out.reward,
                    done: out.failed,
                    reg_action: reg_action.clone().unwrap_or_else(|| action.clone()),
                });
                self.update()?;
            }
            steps.push(StepLog {
                step: self.env.steps(),
                t: self.env.state().t,
                state: self.env.state().x.clone(),
                action,
                reg_action,
                rl_action: a_rl,
                beta,
                reward: out.reward,
            });
            obs_raw = out.observation;
            if out.done {
                break;
            }
        }
        let n = steps.len();
        Ok(EpisodeLog {
            record: RunRecord {
                episode,
                steps: n,
                total_return: total,
                normalized_return: total / n as f64,
                failed,
                mean_beta: beta_sum / n as f64,
                mpc_iterations: iterations,
            },
            initial_state,
            steps,
        })
    }

    /// One update bundle once the buffer holds `learning_starts` records:
    /// critics, the delayed policy and targets, then the focus weight on the
    /// same batch against the freshly updated agent.
    fn update(&mut self) -> Result<()> {
        let agent = self.agent.as_mut().expect("learning modes carry an agent");
        let cfg = agent.config();
        if self.buffer.len() < cfg.learning_starts.max(1) {
            return Ok(());
        }
        let batch = self.buffer.sample(cfg.batch_size, &mut self.rng)?;
        agent.update(&batch, &mut self.rng)?;
        if let Some(focus) = &mut self.focus {
            focus.update(agent, &batch, &mut self.rng)?;
        }
        Ok(())
    }
}

/// Loads a checkpoint and runs one deterministic episode.
pub fn evaluate(config: TrainerConfig, checkpoint: &Checkpoint) -> Result<EpisodeLog> {
    Trainer::restore(config, checkpoint)?.evaluate()
}
