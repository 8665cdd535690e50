//! Source authentication and per-source rate limiting.

use std::collections::{BTreeMap, HashMap, VecDeque};

use serde::{Deserialize, Serialize};
use subtle::ConstantTimeEq;
use thiserror::Error;

use crate::geom::Timestamp;

pub const RATE_WINDOW_SECONDS: i64 = 60;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceCredential {
    pub source_id: String,
    pub api_key: String,
    /// Max accepted events per 60-second sliding window.
    pub rate_limit: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceContext {
    pub source_id: String,
    pub rate_limit: u32,
}

/// The same error whether the source is unknown or the key is wrong.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("authentication failed")]
pub struct AuthFailed;

#[derive(Debug, Error)]
pub enum CredentialError {
    #[error("credential for {0:?} has rate_limit 0")]
    ZeroRateLimit(String),
    #[error("duplicate credential for {0:?}")]
    Duplicate(String),
    #[error("api key of {0:?} is shared with another source")]
    SharedKey(String),
}

#[derive(Debug, Clone, Default)]
pub struct CredentialStore {
    sources: BTreeMap<String, SourceCredential>,
}

const DECOY_KEY: &[u8] = b"decoy-key-used-when-the-source-is-unknown";

fn keys_match(given: &[u8], stored: &[u8]) -> bool {
    bool::from(given.ct_eq(stored))
}

impl CredentialStore {
    pub fn new(credentials: Vec<SourceCredential>) -> Result<Self, CredentialError> {
        let mut sources = BTreeMap::new();
        for cred in credentials {
            if cred.rate_limit == 0 {
                return Err(CredentialError::ZeroRateLimit(cred.source_id));
            }
            if sources.values().any(|c: &SourceCredential| c.api_key == cred.api_key) {
                return Err(CredentialError::SharedKey(cred.source_id));
            }
            if sources.contains_key(&cred.source_id) {
                return Err(CredentialError::Duplicate(cred.source_id));
            }
            sources.insert(cred.source_id.clone(), cred);
        }
        Ok(CredentialStore { sources })
    }

    pub fn len(&self) -> usize {
        self.sources.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sources.is_empty()
    }

    pub fn authenticate(&self, source_id: &str, api_key: &str) -> Result<SourceContext, AuthFailed> {
        match self.sources.get(source_id) {
            Some(cred) if keys_match(api_key.as_bytes(), cred.api_key.as_bytes()) => Ok(SourceContext {
                source_id: cred.source_id.clone(),
                rate_limit: cred.rate_limit,
            }),
            Some(_) => Err(AuthFailed),
            None => {
                // burn the same comparison an existing source would
                let _ = keys_match(api_key.as_bytes(), DECOY_KEY);
                Err(AuthFailed)
            }
        }
    }

    /// Authenticates by key alone (the HTTP path only carries `X-Api-Key`).
    /// Every stored key is compared so timing does not reveal which one
    /// matched.
    pub fn authenticate_key(&self, api_key: &str) -> Result<SourceContext, AuthFailed> {
        let mut found = None;
        for cred in self.sources.values() {
            if keys_match(api_key.as_bytes(), cred.api_key.as_bytes()) {
                found = Some(cred);
            }
        }
        found
            .map(|cred| SourceContext { source_id: cred.source_id.clone(), rate_limit: cred.rate_limit })
            .ok_or(AuthFailed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateDecision {
    Allow,
    Throttle,
}

/// Sliding-window counter of accepted events per source.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RateLimiter {
    accepted: HashMap<String, VecDeque<Timestamp>>,
}

impl RateLimiter {
    pub fn new() -> Self {
        Self::default()
    }

    fn in_window(&self, source_id: &str, now: Timestamp) -> usize {
        self.accepted
            .get(source_id)
            .map(|q| q.iter().filter(|&&t| t > now - RATE_WINDOW_SECONDS && t <= now).count())
            .unwrap_or(0)
    }

    /// Allow iff fewer than `rate_limit` events were accepted from the
    /// source in `(now - 60, now]`.
    pub fn check_rate(&self, ctx: &SourceContext, now: Timestamp) -> RateDecision {
        if self.in_window(&ctx.source_id, now) < ctx.rate_limit as usize {
            RateDecision::Allow
        } else {
            RateDecision::Throttle
        }
    }

    pub fn record(&mut self, source_id: &str, now: Timestamp) {
        let q = self.accepted.entry(source_id.to_string()).or_default();
        while q.front().is_some_and(|&t| t <= now - RATE_WINDOW_SECONDS) {
            q.pop_front();
        }
        q.push_back(now);
    }

    /// Window contents as a sorted map, for state comparison.
    pub fn snapshot(&self, now: Timestamp) -> BTreeMap<String, usize> {
        self.accepted
            .keys()
            .map(|k| (k.clone(), self.in_window(k, now)))
            .filter(|(_, n)| *n > 0)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> CredentialStore {
        CredentialStore::new(vec![
            SourceCredential { source_id: "cam".into(), api_key: "k-cam".into(), rate_limit: 10 },
            SourceCredential { source_id: "ble".into(), api_key: "k-ble".into(), rate_limit: 5 },
        ])
        .unwrap()
    }

    #[test]
    fn authenticate_cases() {
        let s = store();
        assert_eq!(s.authenticate("cam", "k-cam").unwrap().source_id, "cam");
        let wrong = s.authenticate("cam", "k-ble").unwrap_err();
        let unknown = s.authenticate("nobody", "k-cam").unwrap_err();
        assert_eq!(wrong, unknown);
        assert_eq!(wrong.to_string(), unknown.to_string());
        assert_eq!(s.authenticate_key("k-ble").unwrap().source_id, "ble");
        assert_eq!(s.authenticate_key("nope"), Err(AuthFailed));
    }

    #[test]
    fn bad_credentials_rejected() {
        let zero = vec![SourceCredential { source_id: "a".into(), api_key: "x".into(), rate_limit: 0 }];
        assert!(CredentialStore::new(zero).is_err());
        let shared = vec![
            SourceCredential { source_id: "a".into(), api_key: "x".into(), rate_limit: 1 },
            SourceCredential { source_id: "b".into(), api_key: "x".into(), rate_limit: 1 },
        ];
        assert!(CredentialStore::new(shared).is_err());
    }

    #[test]
    fn sliding_window_boundaries() {
        let ctx = SourceContext { source_id: "cam".into(), rate_limit: 10 };
        let mut rl = RateLimiter::new();
        for t in 0..9 {
            rl.record("cam", t);
        }
        assert_eq!(rl.check_rate(&ctx, 9), RateDecision::Allow);
        rl.record("cam", 9);
        assert_eq!(rl.check_rate(&ctx, 9), RateDecision::Throttle);
        // events at 0..=9; at now=69 the window (9, 69] is empty
        assert_eq!(rl.check_rate(&ctx, 69), RateDecision::Allow);
        // at now=60 the window (0, 60] still holds 1..=9
        assert_eq!(rl.check_rate(&ctx, 60), RateDecision::Allow);
        assert_eq!(rl.check_rate(&SourceContext { rate_limit: 9, ..ctx.clone() }, 60), RateDecision::Throttle);
    }
}
