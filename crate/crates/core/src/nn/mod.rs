//! Small neural substrate for the actors and critics: flat parameter
//! vectors, dense and LSTM layers with hand-written backward passes, a
//! squashed Gaussian policy head, Adam and a binary checkpoint format.

mod adam;
mod checkpoint;
mod gaussian;
mod layers;
mod net;
mod params;

pub use adam::{Adam, ACTOR_LR, CRITIC_LR};
pub use checkpoint::{Checkpoint, CheckpointEntry, CHECKPOINT_VERSION};
pub use gaussian::{ActionBounds, GaussianHead, HALF_LOG_2PI_E};
pub use layers::{Activation, Dense, Lstm, LstmStep};
pub use net::{bilstm_forward, BiLstmSpec, Encoder, ForwardCache, NetSpec, PolicyNet};
pub use params::{BlockRole, LayoutBuilder, ParamBlock, ParamVector};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("layout: {0}")]
    Layout(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("{what}: expected length {expected}, got {found}")]
    Dimension {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("invalid network spec: {0}")]
    Spec(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub(crate) fn check_len(what: &'static str, expected: usize, found: usize) -> Result<(), NnError> {
    if expected == found {
        Ok(())
    } else {
        Err(NnError::Dimension {
            what,
            expected,
            found,
        })
    }
}
