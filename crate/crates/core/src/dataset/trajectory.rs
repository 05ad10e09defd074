use serde::{Deserialize, Serialize};

use crate::controllers::ControllerKind;
use crate::env::{EnvAction, ObsVector};

/// One recorded episode: `states[t]` is the observation the action `actions[t]`
/// was chosen in, `rewards[t]` the reward that followed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub states: Vec<ObsVector>,
    pub actions: Vec<EnvAction>,
    pub rewards: Vec<f64>,
    pub kind: ControllerKind,
    pub seed: u64,
    pub success: bool,
}

impl Trajectory {
    pub fn new(kind: ControllerKind, seed: u64) -> Self {
        Self {
            states: Vec::new(),
            actions: Vec::new(),
            rewards: Vec::new(),
            kind,
            seed,
            success: false,
        }
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn push(&mut self, state: ObsVector, action: EnvAction, reward: f64) {
        self.states.push(state);
        self.actions.push(action);
        self.rewards.push(reward);
    }
}
