//! Membership Service Provider: enrollment, digital identities, and
//! signature verification for every network participant.
//!
//! The MSP is a trusted in-process directory. Certificates are directory
//! entries rather than X.509 chains; signing keys live in a separate
//! keystore and never appear in ledger structures. Keys are derived
//! deterministically from the identity id so that whole-network replays
//! are byte-reproducible.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::RwLock;

use ed25519_dalek::{Signer, SigningKey, Verifier, VerifyingKey};
use serde::{Deserialize, Serialize};

use crate::codec::sha256_concat;

const KEY_DERIVATION_TAG: &[u8] = b"trialmesh/msp-key/v1";

/// The eight stakeholder roles of a multi-site clinical trial network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Role {
    Subject,
    PrincipalInvestigator,
    CoordinatingCenter,
    #[serde(rename = "DSMB")]
    Dsmb,
    #[serde(rename = "IRB")]
    Irb,
    RegulatoryAgency,
    Sponsor,
    Analyst,
}

impl Role {
    pub const ALL: [Role; 8] = [
        Role::Subject,
        Role::PrincipalInvestigator,
        Role::CoordinatingCenter,
        Role::Dsmb,
        Role::Irb,
        Role::RegulatoryAgency,
        Role::Sponsor,
        Role::Analyst,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Role::Subject => "Subject",
            Role::PrincipalInvestigator => "PrincipalInvestigator",
            Role::CoordinatingCenter => "CoordinatingCenter",
            Role::Dsmb => "DSMB",
            Role::Irb => "IRB",
            Role::RegulatoryAgency => "RegulatoryAgency",
            Role::Sponsor => "Sponsor",
            Role::Analyst => "Analyst",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Role {
    type Err = IdentityError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Role::ALL
            .iter()
            .copied()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| IdentityError::UnknownRole(s.to_string()))
    }
}

/// A registered network participant. The public key verifies signatures
/// produced with the matching private key held in the MSP keystore.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Identity {
    pub id: String,
    pub role: Role,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub site_id: Option<String>,
    pub public_key: Vec<u8>,
    pub revoked: bool,
}

/// Detached signature bytes (Ed25519, 64 bytes).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Signature(pub Vec<u8>);

impl Signature {
    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }
}

#[derive(Debug, thiserror::Error)]
pub enum IdentityError {
    #[error("identity '{0}' already enrolled")]
    DuplicateIdentity(String),
    #[error("identity '{0}' not found")]
    UnknownIdentity(String),
    #[error("identity '{0}' is revoked")]
    RevokedIdentity(String),
    #[error("unknown role '{0}'")]
    UnknownRole(String),
    #[error("keystore has no private key for '{0}'")]
    MissingKey(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed directory file: {0}")]
    Malformed(#[from] serde_json::Error),
}

struct MspInner {
    directory: BTreeMap<String, Identity>,
    keystore: BTreeMap<String, SigningKey>,
}

/// The trusted membership authority. Reads are concurrent; enrollment and
/// revocation serialize through the inner write lock.
pub struct Msp {
    inner: RwLock<MspInner>,
}

impl Default for Msp {
    fn default() -> Self {
        Self::new()
    }
}

impl Msp {
    pub fn new() -> Self {
        Self {
            inner: RwLock::new(MspInner {
                directory: BTreeMap::new(),
                keystore: BTreeMap::new(),
            }),
        }
    }

    /// Enroll a participant, deriving a fresh key pair. The signing key is
    /// derived from the id so that replays of the same roster reproduce
    /// identical signatures.
    pub fn enroll(
        &self,
        id: &str,
        role: Role,
        site_id: Option<&str>,
    ) -> Result<Identity, IdentityError> {
        let mut inner = self.inner.write().unwrap();
        if inner.directory.contains_key(id) {
            return Err(IdentityError::DuplicateIdentity(id.to_string()));
        }
        let seed = sha256_concat(&[KEY_DERIVATION_TAG, id.as_bytes()]);
        let signing = SigningKey::from_bytes(&seed);
        let identity = Identity {
            id: id.to_string(),
            role,
            site_id: site_id.map(|s| s.to_string()),
            public_key: signing.verifying_key().as_bytes().to_vec(),
            revoked: false,
        };
        inner.keystore.insert(id.to_string(), signing);
        inner.directory.insert(id.to_string(), identity.clone());
        Ok(identity)
    }

    pub fn get(&self, id: &str) -> Result<Identity, IdentityError> {
        self.inner
            .read()
            .unwrap()
            .directory
            .get(id)
            .cloned()
            .ok_or_else(|| IdentityError::UnknownIdentity(id.to_string()))
    }

    pub fn contains(&self, id: &str) -> bool {
        self.inner.read().unwrap().directory.contains_key(id)
    }

    /// All enrolled identities, ordered by id.
    pub fn directory(&self) -> Vec<Identity> {
        self.inner.read().unwrap().directory.values().cloned().collect()
    }

    pub fn revoke(&self, id: &str) -> Result<(), IdentityError> {
        let mut inner = self.inner.write().unwrap();
        let entry = inner
            .directory
            .get_mut(id)
            .ok_or_else(|| IdentityError::UnknownIdentity(id.to_string()))?;
        entry.revoked = true;
        Ok(())
    }

    /// Sign a message with the identity's private key. Revoked identities
    /// cannot sign.
    pub fn sign(&self, id: &str, message: &[u8]) -> Result<Signature, IdentityError> {
        let inner = self.inner.read().unwrap();
        let ident = inner
            .directory
            .get(id)
            .ok_or_else(|| IdentityError::UnknownIdentity(id.to_string()))?;
        if ident.revoked {
            return Err(IdentityError::RevokedIdentity(id.to_string()));
        }
        let key = inner
            .keystore
            .get(id)
            .ok_or_else(|| IdentityError::MissingKey(id.to_string()))?;
        Ok(Signature(key.sign(message).to_bytes().to_vec()))
    }

    /// True iff the identity exists, is unrevoked, and has the required role.
    pub fn authorize(&self, id: &str, required: Role) -> bool {
        match self.inner.read().unwrap().directory.get(id) {
            Some(ident) => !ident.revoked && ident.role == required,
            None => false,
        }
    }

    /// Verify a signature against the enrolled identity's public key,
    /// refusing revoked identities.
    pub fn verify_by(&self, id: &str, message: &[u8], sig: &Signature) -> bool {
        match self.inner.read().unwrap().directory.get(id) {
            Some(ident) if !ident.revoked => verify_signature(&ident.public_key, message, sig),
            _ => false,
        }
    }

    pub fn export_directory(&self, path: &Path) -> Result<(), IdentityError> {
        let entries: Vec<DirectoryEntry> = self
            .inner
            .read()
            .unwrap()
            .directory
            .values()
            .map(DirectoryEntry::from)
            .collect();
        std::fs::write(path, serde_json::to_string_pretty(&entries)? + "\n")?;
        Ok(())
    }

    /// Load a directory export. Imported identities are verification-only
    /// unless the keystore is imported alongside.
    pub fn import_directory(path: &Path) -> Result<Msp, IdentityError> {
        let entries: Vec<DirectoryEntry> = serde_json::from_slice(&std::fs::read(path)?)?;
        let msp = Msp::new();
        {
            let mut inner = msp.inner.write().unwrap();
            for e in entries {
                let ident = e.into_identity()?;
                inner.directory.insert(ident.id.clone(), ident);
            }
        }
        Ok(msp)
    }

    pub fn export_keystore(&self, path: &Path) -> Result<(), IdentityError> {
        let entries: Vec<KeystoreEntry> = self
            .inner
            .read()
            .unwrap()
            .keystore
            .iter()
            .map(|(id, key)| KeystoreEntry {
                id: id.clone(),
                private_key_hex: hex::encode(key.to_bytes()),
            })
            .collect();
        std::fs::write(path, serde_json::to_string_pretty(&entries)? + "\n")?;
        Ok(())
    }

    pub fn import_keystore(&self, path: &Path) -> Result<(), IdentityError> {
        let entries: Vec<KeystoreEntry> = serde_json::from_slice(&std::fs::read(path)?)?;
        let mut inner = self.inner.write().unwrap();
        for e in entries {
            let bytes = hex::decode(&e.private_key_hex)
                .map_err(|_| IdentityError::MissingKey(e.id.clone()))?;
            let seed: [u8; 32] = bytes
                .try_into()
                .map_err(|_| IdentityError::MissingKey(e.id.clone()))?;
            inner.keystore.insert(e.id, SigningKey::from_bytes(&seed));
        }
        Ok(())
    }
}

/// Stateless signature check: true iff `sig` was produced over exactly
/// `message` by the key matching `public_key`. Malformed inputs are false.
pub fn verify_signature(public_key: &[u8], message: &[u8], sig: &Signature) -> bool {
    let Ok(pk_bytes) = <[u8; 32]>::try_from(public_key) else {
        return false;
    };
    let Ok(vk) = VerifyingKey::from_bytes(&pk_bytes) else {
        return false;
    };
    let Ok(sig_bytes) = <[u8; 64]>::try_from(sig.as_bytes()) else {
        return false;
    };
    vk.verify(message, &ed25519_dalek::Signature::from_bytes(&sig_bytes))
        .is_ok()
}

#[derive(Serialize, Deserialize)]
struct DirectoryEntry {
    id: String,
    role: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    site_id: Option<String>,
    public_key_hex: String,
    revoked: bool,
}

impl From<&Identity> for DirectoryEntry {
    fn from(i: &Identity) -> Self {
        DirectoryEntry {
            id: i.id.clone(),
            role: i.role.as_str().to_string(),
            site_id: i.site_id.clone(),
            public_key_hex: hex::encode(&i.public_key),
            revoked: i.revoked,
        }
    }
}

impl DirectoryEntry {
    fn into_identity(self) -> Result<Identity, IdentityError> {
        Ok(Identity {
            role: self.role.parse()?,
            public_key: hex::decode(&self.public_key_hex)
                .map_err(|_| IdentityError::UnknownRole(self.public_key_hex.clone()))?,
            id: self.id,
            site_id: self.site_id,
            revoked: self.revoked,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct KeystoreEntry {
    id: String,
    private_key_hex: String,
}
