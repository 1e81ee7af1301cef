use std::path::Path;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::env::{Agent, AgentId, EnvConfig};
use crate::game::GameInstance;
use crate::marl::{obs_scale, Algorithm, PolicyAgent, PpoAgent, TrainConfig};
use crate::nn::{Checkpoint, CheckpointEntry, GaussianHead};

/// Everything needed to rebuild a roster from its networks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub algorithm: Algorithm,
    pub game: GameInstance,
    pub env: EnvConfig,
    pub train: TrainConfig,
}

/// Actors are stored as `<agent>.actor` (with bounds and mask), critics as `<agent>.critic`.
pub fn save_agents(path: &Path, agents: &[PolicyAgent], meta: &RunMetadata) -> Result<(), HarnessError> {
    let mut entries = Vec::new();
    for a in agents {
        let p = a
            .as_ppo()
            .ok_or_else(|| HarnessError::Checkpoint(format!("{} has no networks to save", a.id())))?;
        entries.push(CheckpointEntry {
            name: format!("{}.actor", p.id),
            net: p.actor.clone(),
            bounds: Some(p.head.bounds.clone()),
            mask: p.mask.clone(),
        });
        entries.push(CheckpointEntry {
            name: format!("{}.critic", p.id),
            net: p.critic.clone(),
            bounds: None,
            mask: None,
        });
    }
    let ckpt = Checkpoint {
        metadata: serde_json::to_value(meta)?,
        entries,
    };
    ckpt.save(path)?;
    Ok(())
}

pub fn load_agents(path: &Path) -> Result<(RunMetadata, Vec<PolicyAgent>), HarnessError> {
    let ckpt = Checkpoint::load(path)?;
    let meta: RunMetadata = serde_json::from_value(ckpt.metadata.clone())?;
    let g = &meta.game;
    let ids = (0..g.num_rsus())
        .map(AgentId::Leader)
        .chain((0..g.num_avs()).map(AgentId::Follower));
    let mut agents = Vec::new();
    for id in ids {
        let get = |role: &str| {
            ckpt.entry(&format!("{id}.{role}"))
                .ok_or_else(|| HarnessError::Checkpoint(format!("missing {id}.{role}")))
        };
        let actor = get("actor")?;
        let critic = get("critic")?;
        let bounds = actor
            .bounds
            .clone()
            .ok_or_else(|| HarnessError::Checkpoint(format!("{id}.actor has no action bounds")))?;
        let scale = obs_scale(g, meta.env.history_window, !id.is_leader());
        if scale.len() != actor.net.spec.input_dim {
            return Err(HarnessError::Checkpoint(format!(
                "{id}.actor expects {} inputs, the stored market gives {}",
                actor.net.spec.input_dim,
                scale.len()
            )));
        }
        let mut p = PpoAgent::from_parts(
            id,
            actor.net.clone(),
            critic.net.clone(),
            GaussianHead::new(bounds),
            scale,
            &meta.train,
        );
        p.mask = actor.mask.clone();
        agents.push(PolicyAgent::Ppo(Box::new(p)));
    }
    Ok((meta, agents))
}
