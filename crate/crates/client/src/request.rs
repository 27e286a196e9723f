use copilot_core::prompting::RenderedPrompt;
use serde::{Deserialize, Serialize};

use crate::error::ClientError;

pub const DEFAULT_MODEL: &str = "gpt-3.5-turbo-1106";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::User,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
    pub request_id: String,
    /// Opaque end-user tag forwarded to the provider. Always a pseudonym token.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub user: Option<String>,
}

impl ChatRequest {
    /// A system + user request built from a rendered prompt.
    pub fn from_prompt(
        prompt: &RenderedPrompt,
        model: impl Into<String>,
        temperature: f64,
        max_tokens: u32,
        request_id: impl Into<String>,
    ) -> Self {
        ChatRequest {
            model: model.into(),
            messages: vec![
                ChatMessage::system(prompt.system_text.clone()),
                ChatMessage::user(prompt.user_text.clone()),
            ],
            temperature,
            max_tokens,
            request_id: request_id.into(),
            user: None,
        }
    }

    pub fn with_user(mut self, user: impl Into<String>) -> Self {
        self.user = Some(user.into());
        self
    }

    pub fn system_text(&self) -> &str {
        self.messages
            .iter()
            .find(|m| m.role == Role::System)
            .map_or("", |m| m.content.as_str())
    }

    /// Content of the last user message.
    pub fn user_text(&self) -> &str {
        self.messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map_or("", |m| m.content.as_str())
    }

    pub fn validate(&self) -> Result<(), ClientError> {
        let bad = |why: &str| Err(ClientError::InvalidRequest(why.to_owned()));
        if self.messages.first().map(|m| m.role) != Some(Role::System) {
            return bad("first message must be the system message");
        }
        if !self.messages.iter().any(|m| m.role == Role::User) {
            return bad("at least one user message is required");
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return bad("temperature must lie in [0, 2]");
        }
        if self.max_tokens == 0 {
            return bad("max_tokens must be positive");
        }
        if self.model.is_empty() {
            return bad("model is empty");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub content: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub latency_ms: u64,
    pub provider: String,
    pub request_id: String,
    /// Transport attempts it took, including the successful one.
    pub attempts: u32,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req() -> ChatRequest {
        ChatRequest {
            model: DEFAULT_MODEL.into(),
            messages: vec![ChatMessage::system("s"), ChatMessage::user("u")],
            temperature: 0.7,
            max_tokens: 10,
            request_id: "r".into(),
            user: None,
        }
    }

    #[test]
    fn invariants() {
        assert!(req().validate().is_ok());
        let mut r = req();
        r.messages.swap(0, 1);
        assert!(r.validate().is_err());
        let mut r = req();
        r.messages.truncate(1);
        assert!(r.validate().is_err());
        let mut r = req();
        r.temperature = 2.5;
        assert!(r.validate().is_err());
        let mut r = req();
        r.max_tokens = 0;
        assert!(r.validate().is_err());
    }

    #[test]
    fn wire_shape() {
        let v = serde_json::to_value(req().with_user("S-ab12")).unwrap();
        assert_eq!(v["messages"][0]["role"], "system");
        assert_eq!(v["user"], "S-ab12");
        assert!(serde_json::to_value(req()).unwrap().get("user").is_none());
    }
}
