use std::sync::Arc;

use copilot_core::privacy::{Finding, PseudonymMap};

use crate::request::ChatRequest;

/// Last check before anything leaves the process: every message is scanned
/// for roster literals.
#[derive(Debug, Clone, Default)]
pub struct OutboundGate {
    map: Option<Arc<PseudonymMap>>,
}

impl OutboundGate {
    pub fn new(map: Arc<PseudonymMap>) -> Self {
        OutboundGate { map: Some(map) }
    }

    /// A gate with no roster to check against.
    pub fn open() -> Self {
        OutboundGate { map: None }
    }

    pub fn is_open(&self) -> bool {
        self.map.is_none()
    }

    pub fn check(&self, req: &ChatRequest) -> Result<(), Vec<Finding>> {
        let Some(map) = &self.map else {
            return Ok(());
        };
        let mut findings: Vec<Finding> = req.messages.iter().flat_map(|m| map.scan_for_pii(&m.content)).collect();
        if let Some(user) = &req.user {
            findings.extend(map.scan_for_pii(user));
        }
        if findings.is_empty() {
            Ok(())
        } else {
            Err(findings)
        }
    }
}
