//! Client/server messages, the global feature bank and byte-exact transfer accounting.

mod bank;
mod ledger;
mod wire;

pub use bank::{FeatureBank, DEFAULT_BANK_CAPACITY};
pub use ledger::{CommLedger, Direction, LedgerEntry, LedgerFilter, TransferKind};
pub use wire::{
    decode_features, decode_prototypes, deserialize_model, deserialize_model_for, encode_features,
    encode_prototypes, feature_blob_len, model_blob_len, prototype_blob_len, serialize_model,
    FeatureRecord, MODEL_FORMAT_VERSION,
};
