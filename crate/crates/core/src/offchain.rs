//! Content-addressed encrypted blob store.
//!
//! Large or sensitive payloads live off-ledger; the chain carries only a
//! `BlobRef` (ciphertext digest) plus a wrapped data key in channel state.
//! Encryption is convergent: the data key and nonce are derived from the
//! plaintext, so storing the same bytes twice yields the same ciphertext,
//! the same digest, and the same file. That makes endorsement-time writes
//! idempotent across peers.

use std::path::{Path, PathBuf};

use chacha20poly1305::aead::{Aead, KeyInit};
use chacha20poly1305::{ChaCha20Poly1305, Key, Nonce};
use serde::{Deserialize, Serialize};

use crate::codec::{sha256, sha256_concat, Hash32};

const DATA_KEY_TAG: &[u8] = b"trialmesh/blob-key/v1";
const NONCE_TAG: &[u8] = b"trialmesh/blob-nonce/v1";
const WRAP_TAG: &[u8] = b"trialmesh/wrap-key/v1";

/// Ledger-side handle to an off-chain blob. Never embeds plaintext.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlobRef {
    pub content_digest_hex: String,
    pub size_bytes: u64,
    pub created_day: u64,
}

#[derive(Debug, thiserror::Error)]
pub enum BlobError {
    #[error("no blob stored under digest {0}")]
    UnknownRef(String),
    #[error("stored ciphertext does not match its digest {0}")]
    IntegrityFailure(String),
    #[error("ciphertext failed authenticated decryption")]
    DecryptionFailure,
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// 32-byte symmetric key for blob encryption.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlobKey(pub [u8; 32]);

impl BlobKey {
    /// Convergent data key: derived from the plaintext itself.
    pub fn derive(plaintext: &[u8]) -> Self {
        BlobKey(sha256_concat(&[DATA_KEY_TAG, plaintext]))
    }

    /// Per-channel wrapping key; wrapped data keys live in channel state,
    /// readable only by channel members.
    pub fn channel_wrap_key(channel_id: &str) -> Self {
        BlobKey(sha256_concat(&[WRAP_TAG, channel_id.as_bytes()]))
    }

    /// XOR-wrap a data key for on-ledger storage. Symmetric: wrapping the
    /// wrapped key restores the original.
    pub fn wrap(&self, data_key: &BlobKey) -> [u8; 32] {
        let mut out = [0u8; 32];
        for (o, (a, b)) in out.iter_mut().zip(self.0.iter().zip(&data_key.0)) {
            *o = a ^ b;
        }
        out
    }

    pub fn unwrap_key(&self, wrapped: &[u8; 32]) -> BlobKey {
        BlobKey(self.wrap(&BlobKey(*wrapped)))
    }
}

/// Filesystem-backed blob store, one file per ciphertext digest under a
/// two-level hex-prefix directory.
#[derive(Debug, Clone)]
pub struct BlobStore {
    root: PathBuf,
}

impl BlobStore {
    pub fn new(root: &Path) -> Self {
        BlobStore { root: root.to_path_buf() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn path_for(&self, digest_hex: &str) -> PathBuf {
        self.root.join(&digest_hex[0..2]).join(&digest_hex[2..4]).join(digest_hex)
    }

    /// Encrypt and persist. Identical (plaintext, key) always produces the
    /// identical ref, so concurrent or repeated stores are safe.
    pub fn store_blob(
        &self,
        plaintext: &[u8],
        key: &BlobKey,
        created_day: u64,
    ) -> Result<BlobRef, BlobError> {
        let ciphertext = encrypt(plaintext, key);
        let digest_hex = hex::encode(sha256(&ciphertext));
        let path = self.path_for(&digest_hex);
        if !path.exists() {
            std::fs::create_dir_all(path.parent().unwrap())?;
            std::fs::write(&path, &ciphertext)?;
        }
        Ok(BlobRef {
            content_digest_hex: digest_hex,
            size_bytes: ciphertext.len() as u64,
            created_day,
        })
    }

    /// Verify ciphertext integrity against the content digest, then
    /// decrypt with authentication.
    pub fn fetch_blob(&self, blob: &BlobRef, key: &BlobKey) -> Result<Vec<u8>, BlobError> {
        let path = self.path_for(&blob.content_digest_hex);
        if !path.exists() {
            return Err(BlobError::UnknownRef(blob.content_digest_hex.clone()));
        }
        let ciphertext = std::fs::read(&path)?;
        if hex::encode(sha256(&ciphertext)) != blob.content_digest_hex {
            return Err(BlobError::IntegrityFailure(blob.content_digest_hex.clone()));
        }
        decrypt(&ciphertext, key)
    }

    pub fn contains(&self, digest_hex: &str) -> bool {
        self.path_for(digest_hex).exists()
    }

    /// Ciphertext size of a stored blob, if present.
    pub fn size_of(&self, digest_hex: &str) -> Option<u64> {
        std::fs::metadata(self.path_for(digest_hex)).ok().map(|m| m.len())
    }
}

fn blob_nonce(plaintext_digest: &Hash32) -> Nonce {
    let full = sha256_concat(&[NONCE_TAG, plaintext_digest]);
    *Nonce::from_slice(&full[0..12])
}

fn encrypt(plaintext: &[u8], key: &BlobKey) -> Vec<u8> {
    let cipher = ChaCha20Poly1305::new(Key::from_slice(&key.0));
    let nonce = blob_nonce(&sha256(plaintext));
    let mut out = nonce.to_vec();
    // encryption with a fixed key and deterministic nonce cannot fail
    out.extend(cipher.encrypt(&nonce, plaintext).unwrap());
    out
}

fn decrypt(ciphertext: &[u8], key: &BlobKey) -> Result<Vec<u8>, BlobError> {
    if ciphertext.len() < 12 {
        return Err(BlobError::DecryptionFailure);
    }
    let (nonce, body) = ciphertext.split_at(12);
    let cipher = ChaCha20Poly1305::new(Key::from_slice(&key.0));
    cipher
        .decrypt(Nonce::from_slice(nonce), body)
        .map_err(|_| BlobError::DecryptionFailure)
}
