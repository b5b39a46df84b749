use serde::Serialize;
use sha2::{Digest, Sha256};

/// Short stable hash of a configuration's canonical JSON form.
pub fn of<T: Serialize>(v: &T) -> String {
    let json = serde_json::to_vec(v).expect("config serializes");
    let digest = Sha256::digest(&json);
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}
