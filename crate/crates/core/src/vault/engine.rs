use std::collections::{BTreeMap, BTreeSet};
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use aes_gcm::aead::{Aead, Payload};
use aes_gcm::{Aes256Gcm, KeyInit, Nonce};
use base64::Engine as _;
use parking_lot::{Mutex, RwLock};
use rand::rngs::OsRng;
use rand::RngCore;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::acl::{validate_name, validate_path, Capability, PolicyDoc, PolicyRule};
use super::shamir::{combine, split, Share};
use super::storage::{
    counter_from_nonce, entry_frame, header_frame, nonce_from_counter, parse_log, Backend, FileBackend, Header,
    Sealed,
};
use super::{Clock, SystemClock, VaultError};
use crate::vault::inject::BINARY_PREFIX;

pub const DEFAULT_MOUNT: &str = "cmsweb";
pub const DEFAULT_SHARES: u8 = 5;
pub const DEFAULT_THRESHOLD: u8 = 3;
pub const DEFAULT_TOKEN_TTL: u64 = 3600;

const KEY_LEN: usize = 32;
const FORMAT: u32 = 1;
const SENTINEL: &[u8] = b"clustergate vault sentinel";
const AAD: &[u8] = b"clustergate-vault/1";

fn default_ttl() -> u64 {
    DEFAULT_TOKEN_TTL
}

/// Binds service-account identities to policies.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Role {
    pub name: String,
    pub bound_service_accounts: Vec<String>,
    pub bound_namespaces: Vec<String>,
    pub policies: Vec<String>,
    #[serde(default = "default_ttl", alias = "ttl")]
    pub token_ttl: u64,
}

impl Role {
    pub fn validate(&self) -> Result<(), VaultError> {
        validate_name(&self.name)?;
        if self.bound_service_accounts.is_empty() || self.bound_namespaces.is_empty() {
            return Err(VaultError::Invalid(format!("role {:?} must bind a service account and a namespace", self.name)));
        }
        if self.policies.is_empty() {
            return Err(VaultError::Invalid(format!("role {:?} grants no policies", self.name)));
        }
        if self.token_ttl == 0 {
            return Err(VaultError::Invalid(format!("role {:?} has a zero token TTL", self.name)));
        }
        Ok(())
    }

    pub fn binds(&self, service_account: &str, namespace: &str) -> bool {
        self.bound_service_accounts.iter().any(|s| s == service_account)
            && self.bound_namespaces.iter().any(|n| n == namespace)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SealStatus {
    pub initialized: bool,
    pub sealed: bool,
    pub shares: u8,
    pub threshold: u8,
    pub progress: u8,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct InitResult {
    pub shares: Vec<String>,
    pub root_token: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Allow,
    Deny,
    Error,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AuditRecord {
    pub timestamp: u64,
    pub token_digest: Option<String>,
    pub operation: String,
    pub path: String,
    pub outcome: Outcome,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct KvVersionInfo {
    pub version: u64,
    pub created_at: u64,
    pub destroyed: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SecretsBundle {
    pub secret_path: String,
    pub policy_name: String,
    pub role_name: String,
    pub version: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct IssuedToken {
    pub token: String,
    pub policies: Vec<String>,
    pub expires_at: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TokenEntry {
    digest: String,
    policies: Vec<String>,
    issued_at: u64,
    expires_at: Option<u64>,
    root: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
enum LogEntry {
    Mount { name: String },
    KvPut { key: String, version: u64, created_at: u64, data: BTreeMap<String, String> },
    KvDestroy { key: String, versions: Vec<u64> },
    Policy { doc: PolicyDoc },
    Role { role: Role },
    Token { token: TokenEntry },
    Revoke { digest: String },
}

struct KvVersion {
    created_at: u64,
    data: Option<BTreeMap<String, String>>,
}

/// Unsealed in-memory index plus the live cipher.
struct Open {
    cipher: Aes256Gcm,
    next_nonce: u128,
    mounts: BTreeSet<String>,
    kv: BTreeMap<String, Vec<KvVersion>>,
    policies: BTreeMap<String, PolicyDoc>,
    roles: BTreeMap<String, Role>,
    tokens: BTreeMap<String, TokenEntry>,
}

impl Open {
    fn new(cipher: Aes256Gcm, next_nonce: u128) -> Self {
        Open {
            cipher,
            next_nonce,
            mounts: BTreeSet::new(),
            kv: BTreeMap::new(),
            policies: BTreeMap::new(),
            roles: BTreeMap::new(),
            tokens: BTreeMap::new(),
        }
    }

    fn apply(&mut self, entry: LogEntry) -> Result<(), VaultError> {
        match entry {
            LogEntry::Mount { name } => {
                self.mounts.insert(name);
            }
            LogEntry::KvPut { key, version, created_at, data } => {
                let versions = self.kv.entry(key.clone()).or_default();
                if version != versions.len() as u64 + 1 {
                    return Err(VaultError::Corrupt(format!("{key}: version {version} out of sequence")));
                }
                versions.push(KvVersion { created_at, data: Some(data) });
            }
            LogEntry::KvDestroy { key, versions } => {
                let list = self.kv.get_mut(&key).ok_or_else(|| VaultError::Corrupt(format!("destroy of unknown {key}")))?;
                for v in versions {
                    if let Some(slot) = list.get_mut(v as usize - 1) {
                        slot.data = None;
                    }
                }
            }
            LogEntry::Policy { doc } => {
                self.policies.insert(doc.name.clone(), doc);
            }
            LogEntry::Role { role } => {
                self.roles.insert(role.name.clone(), role);
            }
            LogEntry::Token { token } => {
                self.tokens.insert(token.digest.clone(), token);
            }
            LogEntry::Revoke { digest } => {
                self.tokens.remove(&digest);
            }
        }
        Ok(())
    }

    fn encrypt(&mut self, entry: &LogEntry) -> Sealed {
        let nonce = nonce_from_counter(self.next_nonce);
        self.next_nonce += 1;
        let plaintext = serde_json::to_vec(entry).expect("log entries serialize");
        let ciphertext = self
            .cipher
            .encrypt(Nonce::from_slice(&nonce), Payload { msg: &plaintext, aad: AAD })
            .expect("encryption with a valid key cannot fail");
        Sealed { nonce, ciphertext }
    }

    fn authorize(&self, token: &str, capability: Capability, path: &str, now: u64) -> Result<(), VaultError> {
        let denied = || VaultError::PermissionDenied { capability: capability.to_string(), path: path.to_string() };
        let entry = self.tokens.get(&token_digest(token)).ok_or_else(denied)?;
        if entry.expires_at.is_some_and(|t| now >= t) {
            return Err(denied());
        }
        if entry.root {
            return Ok(());
        }
        let allowed = entry
            .policies
            .iter()
            .filter_map(|p| self.policies.get(p))
            .any(|p| p.allows(capability, path));
        if allowed {
            Ok(())
        } else {
            Err(denied())
        }
    }

    fn write_capability(&self, exists: bool) -> Capability {
        if exists {
            Capability::Update
        } else {
            Capability::Create
        }
    }
}

struct State {
    backend: Box<dyn Backend>,
    header: Option<Header>,
    pending: Vec<Share>,
    open: Option<Open>,
}

impl State {
    fn open(&self) -> Result<&Open, VaultError> {
        match (&self.header, &self.open) {
            (None, _) => Err(VaultError::NotInitialized),
            (Some(_), None) => Err(VaultError::Sealed),
            (Some(_), Some(open)) => Ok(open),
        }
    }

    /// Encrypts and persists entries in one append, then applies them.
    fn commit(&mut self, entries: Vec<LogEntry>) -> Result<(), VaultError> {
        let open = self.open.as_mut().ok_or(VaultError::Sealed)?;
        let mut bytes = Vec::new();
        for entry in &entries {
            bytes.extend(entry_frame(&open.encrypt(entry)));
        }
        self.backend.append(&bytes)?;
        for entry in entries {
            open.apply(entry)?;
        }
        Ok(())
    }
}

#[derive(Default)]
struct AuditLog {
    records: Vec<AuditRecord>,
    sink: Option<File>,
}

/// The vault. Reads share a lock; writes, seal and unseal are exclusive.
pub struct Vault {
    state: RwLock<State>,
    audit: Mutex<AuditLog>,
    clock: Arc<dyn Clock>,
}

pub fn token_digest(token: &str) -> String {
    hex::encode(Sha256::digest(token.as_bytes()))
}

fn new_token() -> String {
    let mut bytes = [0u8; 16];
    OsRng.fill_bytes(&mut bytes);
    hex::encode(bytes)
}

fn kv_key(mount: &str, path: &str) -> Result<String, VaultError> {
    validate_name(mount)?;
    validate_path(path)?;
    Ok(format!("{mount}/{path}"))
}

impl Vault {
    pub fn open(backend: impl Backend + 'static) -> Result<Self, VaultError> {
        Self::open_with_clock(backend, Arc::new(SystemClock))
    }

    pub fn open_file(path: impl AsRef<Path>) -> Result<Self, VaultError> {
        Self::open(FileBackend::open(path)?)
    }

    /// Loads the header only; an initialized vault always starts sealed.
    pub fn open_with_clock(backend: impl Backend + 'static, clock: Arc<dyn Clock>) -> Result<Self, VaultError> {
        let header = parse_log(&backend.read_all()?)?.map(|(h, _)| h);
        if let Some(h) = &header {
            if h.format != FORMAT || h.threshold == 0 || h.threshold > h.shares {
                return Err(VaultError::Corrupt("unsupported header".into()));
            }
        }
        Ok(Vault {
            state: RwLock::new(State { backend: Box::new(backend), header, pending: Vec::new(), open: None }),
            audit: Mutex::new(AuditLog::default()),
            clock,
        })
    }

    /// Also appends every audit record as a JSON line to `path`.
    pub fn with_audit_file(self, path: impl AsRef<Path>) -> std::io::Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        self.audit.lock().sink = Some(file);
        Ok(self)
    }

    pub fn audit_records(&self) -> Vec<AuditRecord> {
        self.audit.lock().records.clone()
    }

    fn record(&self, digest: Option<String>, operation: &str, path: &str, outcome: Outcome) {
        let record = AuditRecord {
            timestamp: self.clock.now(),
            token_digest: digest,
            operation: operation.to_string(),
            path: path.to_string(),
            outcome,
        };
        let mut log = self.audit.lock();
        if let Some(sink) = &mut log.sink {
            let mut line = serde_json::to_vec(&record).expect("audit records serialize");
            line.push(b'\n');
            // A failing audit sink must not hide the in-memory record.
            let _ = sink.write_all(&line);
        }
        log.records.push(record);
    }

    fn audited<T>(
        &self,
        token: Option<&str>,
        operation: &str,
        path: &str,
        f: impl FnOnce() -> Result<T, VaultError>,
    ) -> Result<T, VaultError> {
        let result = f();
        let outcome = match &result {
            Ok(_) => Outcome::Allow,
            Err(e) if e.is_denial() => Outcome::Deny,
            Err(_) => Outcome::Error,
        };
        self.record(token.map(token_digest), operation, path, outcome);
        result
    }

    pub fn status(&self) -> SealStatus {
        let st = self.state.read();
        match &st.header {
            None => SealStatus { initialized: false, sealed: true, shares: 0, threshold: 0, progress: 0 },
            Some(h) => SealStatus {
                initialized: true,
                sealed: st.open.is_none(),
                shares: h.shares,
                threshold: h.threshold,
                progress: st.pending.len() as u8,
            },
        }
    }

    /// Creates the master key, returns its shares and a root token, and
    /// leaves the vault sealed.
    pub fn init(&self, shares: u8, threshold: u8) -> Result<InitResult, VaultError> {
        self.audited(None, "init", "sys/init", || {
            let mut st = self.state.write();
            if st.header.is_some() {
                return Err(VaultError::AlreadyInitialized);
            }
            if threshold == 0 || threshold > shares {
                return Err(VaultError::Invalid(format!(
                    "need 1 <= threshold <= shares <= 255, got threshold {threshold} of {shares}"
                )));
            }
            let mut key = [0u8; KEY_LEN];
            OsRng.fill_bytes(&mut key);
            let parts = split(&key, shares, threshold, &mut OsRng);
            let cipher = Aes256Gcm::new_from_slice(&key).expect("32-byte key");
            key.fill(0);

            let sentinel_nonce = nonce_from_counter(0);
            let sentinel = cipher
                .encrypt(Nonce::from_slice(&sentinel_nonce), Payload { msg: SENTINEL, aad: AAD })
                .expect("encryption with a valid key cannot fail");
            let header = Header {
                format: FORMAT,
                shares,
                threshold,
                sentinel: hex::encode([sentinel_nonce.as_slice(), &sentinel].concat()),
            };

            let root_token = new_token();
            let mut open = Open::new(cipher, 1);
            let mut bytes = header_frame(&header);
            for entry in [
                LogEntry::Mount { name: DEFAULT_MOUNT.to_string() },
                LogEntry::Token {
                    token: TokenEntry {
                        digest: token_digest(&root_token),
                        policies: vec!["root".into()],
                        issued_at: self.clock.now(),
                        expires_at: None,
                        root: true,
                    },
                },
            ] {
                bytes.extend(entry_frame(&open.encrypt(&entry)));
            }
            st.backend.append(&bytes)?;
            st.header = Some(header);
            Ok(InitResult { shares: parts.iter().map(Share::to_hex).collect(), root_token })
        })
    }

    pub fn unseal(&self, share: &str) -> Result<SealStatus, VaultError> {
        self.audited(None, "unseal", "sys/unseal", || {
            {
                let mut st = self.state.write();
                let header = st.header.clone().ok_or(VaultError::NotInitialized)?;
                if st.open.is_some() {
                    return Err(VaultError::AlreadyUnsealed);
                }
                let share = Share::from_hex(share, KEY_LEN)
                    .ok_or_else(|| VaultError::InvalidShare("expected 66 hex digits".into()))?;
                if share.x > header.shares {
                    return Err(VaultError::InvalidShare(format!("share index {} out of range", share.x)));
                }
                if st.pending.iter().any(|p| p.x == share.x) {
                    return Err(VaultError::DuplicateShare);
                }
                st.pending.push(share);
                if st.pending.len() >= header.threshold as usize {
                    let mut key = combine(&st.pending);
                    st.pending.clear();
                    let cipher = Aes256Gcm::new_from_slice(&key).expect("32-byte key");
                    key.fill(0);
                    let open = replay(&*st.backend, &header, cipher)?;
                    st.open = Some(open);
                }
            }
            Ok(self.status())
        })
    }

    pub fn seal(&self, token: &str) -> Result<(), VaultError> {
        self.audited(Some(token), "seal", "sys/seal", || {
            let mut st = self.state.write();
            st.open()?.authorize(token, Capability::Update, "sys/seal", self.clock.now())?;
            st.open = None;
            st.pending.clear();
            Ok(())
        })
    }

    /// Revokes the presented token, including a root token.
    pub fn revoke(&self, token: &str) -> Result<(), VaultError> {
        self.audited(Some(token), "revoke", "auth/token/revoke-self", || {
            let mut st = self.state.write();
            let digest = token_digest(token);
            if !st.open()?.tokens.contains_key(&digest) {
                return Err(VaultError::PermissionDenied {
                    capability: "update".into(),
                    path: "auth/token/revoke-self".into(),
                });
            }
            st.commit(vec![LogEntry::Revoke { digest }])
        })
    }

    pub fn enable_mount(&self, token: &str, name: &str) -> Result<(), VaultError> {
        let path = format!("sys/mounts/{name}");
        self.audited(Some(token), "mount", &path, || {
            validate_name(name)?;
            let mut st = self.state.write();
            let open = st.open()?;
            open.authorize(token, Capability::Update, &path, self.clock.now())?;
            if open.mounts.contains(name) {
                return Ok(());
            }
            st.commit(vec![LogEntry::Mount { name: name.to_string() }])
        })
    }

    pub fn kv_put(&self, token: &str, mount: &str, path: &str, data: BTreeMap<String, String>) -> Result<u64, VaultError> {
        let full = format!("{mount}/{path}");
        self.audited(Some(token), "kv-put", &full, || {
            let key = kv_key(mount, path)?;
            let mut st = self.state.write();
            let (version, entry) = put_entry(st.open()?, token, &key, self.clock.now(), data)?;
            st.commit(vec![entry])?;
            Ok(version)
        })
    }

    /// Returns the requested version, or the latest live one.
    pub fn kv_get(
        &self,
        token: &str,
        mount: &str,
        path: &str,
        version: Option<u64>,
    ) -> Result<BTreeMap<String, String>, VaultError> {
        self.kv_read(token, mount, path, version).map(|(data, _)| data)
    }

    /// Like [`Vault::kv_get`], also returning which version was read.
    pub fn kv_read(
        &self,
        token: &str,
        mount: &str,
        path: &str,
        version: Option<u64>,
    ) -> Result<(BTreeMap<String, String>, KvVersionInfo), VaultError> {
        let full = format!("{mount}/{path}");
        self.audited(Some(token), "kv-get", &full, || {
            let key = kv_key(mount, path)?;
            let st = self.state.read();
            let open = st.open()?;
            open.authorize(token, Capability::Read, &key, self.clock.now())?;
            if !open.mounts.contains(mount) {
                return Err(VaultError::NotFound(format!("mount {mount}")));
            }
            let versions = open.kv.get(&key).ok_or_else(|| VaultError::NotFound(key.clone()))?;
            let index = match version {
                None => versions
                    .iter()
                    .rposition(|v| v.data.is_some())
                    .ok_or_else(|| VaultError::NotFound(key.clone()))?,
                Some(n) => (n as usize)
                    .checked_sub(1)
                    .filter(|&i| i < versions.len())
                    .ok_or_else(|| VaultError::NotFound(format!("{key} version {n}")))?,
            };
            let slot = &versions[index];
            let info = KvVersionInfo { version: index as u64 + 1, created_at: slot.created_at, destroyed: slot.data.is_none() };
            let data = slot.data.clone().ok_or(VaultError::Destroyed { path: key.clone(), version: info.version })?;
            Ok((data, info))
        })
    }

    pub fn kv_metadata(&self, token: &str, mount: &str, path: &str) -> Result<Vec<KvVersionInfo>, VaultError> {
        let full = format!("{mount}/{path}");
        self.audited(Some(token), "kv-metadata", &full, || {
            let key = kv_key(mount, path)?;
            let st = self.state.read();
            let open = st.open()?;
            open.authorize(token, Capability::Read, &key, self.clock.now())?;
            let versions = open.kv.get(&key).ok_or_else(|| VaultError::NotFound(key.clone()))?;
            Ok(versions
                .iter()
                .enumerate()
                .map(|(i, v)| KvVersionInfo { version: i as u64 + 1, created_at: v.created_at, destroyed: v.data.is_none() })
                .collect())
        })
    }

    /// Erases the data of the given versions; their metadata remains.
    pub fn kv_destroy(&self, token: &str, mount: &str, path: &str, versions: &[u64]) -> Result<(), VaultError> {
        let full = format!("{mount}/{path}");
        self.audited(Some(token), "kv-destroy", &full, || {
            let key = kv_key(mount, path)?;
            let mut st = self.state.write();
            let open = st.open()?;
            open.authorize(token, Capability::Delete, &key, self.clock.now())?;
            let existing = open.kv.get(&key).ok_or_else(|| VaultError::NotFound(key.clone()))?;
            if let Some(bad) = versions.iter().find(|&&v| v == 0 || v as usize > existing.len()) {
                return Err(VaultError::NotFound(format!("{key} version {bad}")));
            }
            st.commit(vec![LogEntry::KvDestroy { key, versions: versions.to_vec() }])
        })
    }

    pub fn put_policy(&self, token: &str, doc: PolicyDoc) -> Result<(), VaultError> {
        let path = format!("sys/policies/{}", doc.name);
        self.audited(Some(token), "policy-write", &path, || {
            doc.validate()?;
            let mut st = self.state.write();
            let open = st.open()?;
            let existing = open.policies.get(&doc.name);
            open.authorize(token, open.write_capability(existing.is_some()), &path, self.clock.now())?;
            if existing == Some(&doc) {
                return Ok(());
            }
            st.commit(vec![LogEntry::Policy { doc: doc.clone() }])
        })
    }

    pub fn get_policy(&self, token: &str, name: &str) -> Result<PolicyDoc, VaultError> {
        let path = format!("sys/policies/{name}");
        self.audited(Some(token), "policy-read", &path, || {
            let st = self.state.read();
            let open = st.open()?;
            open.authorize(token, Capability::Read, &path, self.clock.now())?;
            open.policies.get(name).cloned().ok_or_else(|| VaultError::NotFound(path.clone()))
        })
    }

    pub fn put_role(&self, token: &str, role: Role) -> Result<(), VaultError> {
        let path = format!("auth/kubernetes/role/{}", role.name);
        self.audited(Some(token), "role-write", &path, || {
            role.validate()?;
            let mut st = self.state.write();
            let open = st.open()?;
            let existing = open.roles.get(&role.name);
            open.authorize(token, open.write_capability(existing.is_some()), &path, self.clock.now())?;
            if existing == Some(&role) {
                return Ok(());
            }
            st.commit(vec![LogEntry::Role { role: role.clone() }])
        })
    }

    pub fn get_role(&self, token: &str, name: &str) -> Result<Role, VaultError> {
        let path = format!("auth/kubernetes/role/{name}");
        self.audited(Some(token), "role-read", &path, || {
            let st = self.state.read();
            let open = st.open()?;
            open.authorize(token, Capability::Read, &path, self.clock.now())?;
            open.roles.get(name).cloned().ok_or_else(|| VaultError::NotFound(path.clone()))
        })
    }

    /// Issues a token for an asserted service-account identity. With `role`
    /// unset, the first role by name that binds the identity is used.
    pub fn login(&self, role: Option<&str>, service_account: &str, namespace: &str) -> Result<IssuedToken, VaultError> {
        let mut digest = None;
        let result = (|| {
            let mut st = self.state.write();
            let open = st.open()?;
            let chosen = match role {
                Some(name) => {
                    let r = open
                        .roles
                        .get(name)
                        .ok_or_else(|| VaultError::AuthFailed(format!("unknown role {name:?}")))?;
                    if !r.binds(service_account, namespace) {
                        return Err(VaultError::AuthFailed(format!(
                            "role {name:?} does not bind {namespace}/{service_account}"
                        )));
                    }
                    r
                }
                None => open
                    .roles
                    .values()
                    .find(|r| r.binds(service_account, namespace))
                    .ok_or_else(|| VaultError::AuthFailed(format!("no role binds {namespace}/{service_account}")))?,
            };
            if let Some(missing) = chosen.policies.iter().find(|p| !open.policies.contains_key(*p)) {
                return Err(VaultError::AuthFailed(format!(
                    "role {:?} references missing policy {missing:?}",
                    chosen.name
                )));
            }
            let now = self.clock.now();
            let token = new_token();
            let entry = TokenEntry {
                digest: token_digest(&token),
                policies: chosen.policies.clone(),
                issued_at: now,
                expires_at: Some(now + chosen.token_ttl),
                root: false,
            };
            let issued = IssuedToken { token, policies: entry.policies.clone(), expires_at: entry.expires_at };
            digest = Some(entry.digest.clone());
            st.commit(vec![LogEntry::Token { token: entry }])?;
            Ok(issued)
        })();
        let outcome = match &result {
            Ok(_) => Outcome::Allow,
            Err(e) if e.is_denial() => Outcome::Deny,
            Err(_) => Outcome::Error,
        };
        self.record(digest.filter(|_| result.is_ok()), "login", "auth/kubernetes/login", outcome);
        result
    }

    /// Stores `files` as one secret at `<mount>/<namespace>/<service>-secrets`
    /// and upserts a read policy and a role binding the service account.
    /// Non-UTF-8 contents are stored base64-encoded under a marked key.
    pub fn create_secrets(
        &self,
        token: &str,
        namespace: &str,
        service: &str,
        files: &BTreeMap<String, Vec<u8>>,
    ) -> Result<SecretsBundle, VaultError> {
        let path = format!("{DEFAULT_MOUNT}/{namespace}/{service}-secrets");
        self.audited(Some(token), "create-secrets", &path, || self.create_secrets_inner(token, namespace, service, files))
    }

    /// Reads the regular files of `dir` (not recursing, not following
    /// symlinks) and runs [`Vault::create_secrets`] on them.
    pub fn create_secrets_from_dir(
        &self,
        token: &str,
        namespace: &str,
        service: &str,
        dir: impl AsRef<Path>,
    ) -> Result<SecretsBundle, VaultError> {
        let path = format!("{DEFAULT_MOUNT}/{namespace}/{service}-secrets");
        self.audited(Some(token), "create-secrets", &path, || {
            let files = read_secret_dir(dir.as_ref())?;
            self.create_secrets_inner(token, namespace, service, &files)
        })
    }

    fn create_secrets_inner(
        &self,
        token: &str,
        namespace: &str,
        service: &str,
        files: &BTreeMap<String, Vec<u8>>,
    ) -> Result<SecretsBundle, VaultError> {
        validate_name(namespace)?;
        validate_name(service)?;
        if files.is_empty() {
            return Err(VaultError::Invalid("no files to store".into()));
        }
        let mut data = BTreeMap::new();
        for (name, bytes) in files {
            if name.is_empty() || name.contains('/') || name.starts_with(BINARY_PREFIX) {
                return Err(VaultError::Invalid(format!("invalid secret file name {name:?}")));
            }
            match std::str::from_utf8(bytes) {
                Ok(text) => data.insert(name.clone(), text.to_string()),
                Err(_) => data.insert(
                    format!("{BINARY_PREFIX}{name}"),
                    base64::engine::general_purpose::STANDARD.encode(bytes),
                ),
            };
        }
        let secret = format!("{service}-secrets");
        let key = format!("{DEFAULT_MOUNT}/{namespace}/{secret}");
        let policy = PolicyDoc::new(
            format!("{namespace}-{service}-read"),
            vec![PolicyRule { path: key.clone(), capabilities: [Capability::Read].into() }],
        )?;
        let role = Role {
            name: format!("{namespace}-{service}"),
            bound_service_accounts: vec![service.to_string()],
            bound_namespaces: vec![namespace.to_string()],
            policies: vec![policy.name.clone()],
            token_ttl: DEFAULT_TOKEN_TTL,
        };

        let mut st = self.state.write();
        let open = st.open()?;
        let now = self.clock.now();
        let (version, put) = put_entry(open, token, &key, now, data)?;
        let mut entries = vec![put];
        let policy_path = format!("sys/policies/{}", policy.name);
        let existing = open.policies.get(&policy.name);
        open.authorize(token, open.write_capability(existing.is_some()), &policy_path, now)?;
        if existing != Some(&policy) {
            entries.push(LogEntry::Policy { doc: policy.clone() });
        }
        let role_path = format!("auth/kubernetes/role/{}", role.name);
        let existing = open.roles.get(&role.name);
        open.authorize(token, open.write_capability(existing.is_some()), &role_path, now)?;
        if existing != Some(&role) {
            entries.push(LogEntry::Role { role: role.clone() });
        }
        st.commit(entries)?;
        Ok(SecretsBundle { secret_path: key, policy_name: policy.name, role_name: role.name, version })
    }
}

fn put_entry(
    open: &Open,
    token: &str,
    key: &str,
    now: u64,
    data: BTreeMap<String, String>,
) -> Result<(u64, LogEntry), VaultError> {
    let existing = open.kv.get(key).map_or(0, Vec::len) as u64;
    open.authorize(token, open.write_capability(existing > 0), key, now)?;
    let mount = key.split('/').next().unwrap_or_default();
    if !open.mounts.contains(mount) {
        return Err(VaultError::NotFound(format!("mount {mount}")));
    }
    let version = existing + 1;
    Ok((version, LogEntry::KvPut { key: key.to_string(), version, created_at: now, data }))
}

fn replay(backend: &dyn Backend, header: &Header, cipher: Aes256Gcm) -> Result<Open, VaultError> {
    let sentinel = hex::decode(&header.sentinel).map_err(|_| VaultError::Corrupt("sentinel encoding".into()))?;
    if sentinel.len() < 12 {
        return Err(VaultError::Corrupt("sentinel too short".into()));
    }
    let (nonce, ct) = sentinel.split_at(12);
    match cipher.decrypt(Nonce::from_slice(nonce), Payload { msg: ct, aad: AAD }) {
        Ok(plain) if plain == SENTINEL => {}
        _ => return Err(VaultError::UnsealFailed),
    }
    let (_, entries) = parse_log(&backend.read_all()?)?.ok_or(VaultError::NotInitialized)?;
    let mut open = Open::new(cipher, 1);
    for sealed in entries {
        let plain = open
            .cipher
            .decrypt(Nonce::from_slice(&sealed.nonce), Payload { msg: &sealed.ciphertext, aad: AAD })
            .map_err(|_| VaultError::Corrupt("entry failed authentication".into()))?;
        let entry: LogEntry =
            serde_json::from_slice(&plain).map_err(|e| VaultError::Corrupt(format!("entry: {e}")))?;
        open.apply(entry)?;
        let counter = counter_from_nonce(&sealed.nonce);
        if counter < open.next_nonce {
            return Err(VaultError::Corrupt("nonce reused".into()));
        }
        open.next_nonce = counter + 1;
    }
    Ok(open)
}

fn read_secret_dir(dir: &Path) -> Result<BTreeMap<String, Vec<u8>>, VaultError> {
    let mut files = BTreeMap::new();
    for entry in std::fs::read_dir(dir)? {
        let entry = entry?;
        if !entry.file_type()?.is_file() {
            continue;
        }
        let name = entry
            .file_name()
            .into_string()
            .map_err(|n| VaultError::Invalid(format!("file name {n:?} is not UTF-8")))?;
        files.insert(name, std::fs::read(entry.path())?);
    }
    if files.is_empty() {
        return Err(VaultError::Invalid(format!("{} contains no regular files", dir.display())));
    }
    Ok(files)
}
