//! Derived conversation state: the keyword index, the preference space,
//! the session document, and its on-disk persistence.

mod index;
mod persist;
mod session;

pub use index::{Associations, HistoryIndex, IndexEntry, KeywordKind, KeywordRef};
pub use persist::FileStore;
pub use session::{
    EventRecord, HallucinationLabel, Message, MessageKind, Metrics, PinKind, PreferenceSpace,
    Session, SessionConfig, DOCUMENT_VERSION,
};

use crate::ids::MessageId;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("unknown key {0:?}")]
    UnknownKey(String),
    #[error("unknown kind {0:?}")]
    UnknownKind(String),
    #[error("unknown message {0}")]
    UnknownMessage(MessageId),
    #[error("corrupt session document: {0}")]
    CorruptDocument(String),
    #[error("document version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("session {0} not found")]
    NotFound(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
