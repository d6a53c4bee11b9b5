//! Deterministic backend for the synthetic corpus.
//!
//! The query frame URLs name content hashes; their digest identifies the
//! segment recorded at ingest, and the clip hash leads to the trajectory
//! sidecar. The rule oracle classifies that window and the answer is
//! returned in the same JSON shape a real model is asked for.

use std::path::PathBuf;

use async_trait::async_trait;

use super::{hash_from_url, Backend, BackendKind, CallError, InferenceRequest, MockSettings};
use crate::media_ingest::{frameset_digest, IngestStore};
use crate::prompt_forge::answer_json;
use crate::synth_arena::{load_sidecar, oracle_classify, OracleThresholds};
use crate::taxonomy::{StageLabel, Subcategory};

#[derive(Debug, Clone)]
pub struct MockOracle {
    store: PathBuf,
    sidecars: PathBuf,
    thresholds: OracleThresholds,
}

/// Short justification the mock gives for each behavior.
pub fn mock_reason(sub: Subcategory) -> &'static str {
    match sub {
        Subcategory::Punching | Subcategory::Slapping | Subcategory::HittingWithObject => {
            "striking contact between avatars"
        }
        Subcategory::Looming => "face held inside the other avatar's personal space",
        Subcategory::FollowingStalking => "persistently trailing the other avatar at short range",
        Subcategory::Blocking => "standing in the other avatar's path and stopping them",
        Subcategory::BenignOther => "ordinary play with no hostile contact",
    }
}

impl MockOracle {
    pub fn new(settings: MockSettings) -> Self {
        Self {
            store: settings.store,
            sidecars: settings.sidecars,
            thresholds: settings.thresholds,
        }
    }

    fn answer(&self, request: &InferenceRequest) -> Result<String, CallError> {
        let hashes = request
            .query_urls()
            .iter()
            .map(|u| hash_from_url(u).ok_or_else(|| CallError::Unresolvable(format!("not a frame URL: {u}"))))
            .collect::<Result<Vec<_>, _>>()?;
        let digest = frameset_digest(hashes);
        let store = IngestStore::open(&self.store).map_err(|e| CallError::Unresolvable(e.to_string()))?;
        let origin = store
            .origin(&digest)
            .ok_or_else(|| CallError::Unresolvable(format!("unknown frame set {digest}")))?;
        let sidecar = load_sidecar(&self.sidecars, &origin.clip_sha256)
            .map_err(|e| CallError::Unresolvable(format!("no trajectory for clip {}: {e}", origin.clip_id)))?;
        let verdict = oracle_classify(&sidecar.trajectory, origin.start, origin.length, &self.thresholds)
            .map_err(|e| CallError::Unresolvable(e.to_string()))?;
        let label = StageLabel::from_truth(request.bundle.stage, verdict.label);
        Ok(answer_json(label, mock_reason(verdict.subcategory)))
    }
}

#[async_trait]
impl Backend for MockOracle {
    fn kind(&self) -> BackendKind {
        BackendKind::MockOracle
    }

    async fn call(&self, request: &InferenceRequest) -> Result<String, CallError> {
        self.answer(request)
    }
}
