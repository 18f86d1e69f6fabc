use sha2::{Digest, Sha256};

/// Short hex digest used to tie artifacts (datasets, checkpoints, reports) together.
pub fn content_hash(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    hex::encode(&digest[..8])
}
