use serde::{Deserialize, Serialize};

use super::CorpusError;

/// The literal topic string that stands for "no topic".
pub const NULL_TOPIC: &str = "NULL";

/// Ordered key/value entries describing the user. Entry order is the memory
/// slot order and is preserved from the input file.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct UserProfile {
    pub entries: Vec<(String, String)>,
}

impl UserProfile {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }
}

/// A `(subject, relation, object)` domain-knowledge fact.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct KnowledgeTriple {
    pub subject: String,
    pub relation: String,
    pub object: String,
}

impl KnowledgeTriple {
    pub fn new(
        subject: impl Into<String>,
        relation: impl Into<String>,
        object: impl Into<String>,
    ) -> Self {
        KnowledgeTriple {
            subject: subject.into(),
            relation: relation.into(),
            object: object.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    User,
    System,
}

/// One utterance of the conversation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub role: Role,
    pub utterance: String,
}

/// One step of the annotated plan: a dialogue action plus the topic it
/// delivers ("NULL" when the action needs no entity).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PlanStep {
    pub action: String,
    pub topic: String,
}

impl PlanStep {
    pub fn new(action: impl Into<String>, topic: impl Into<String>) -> Self {
        PlanStep {
            action: action.into(),
            topic: topic.into(),
        }
    }

    pub fn has_topic(&self) -> bool {
        self.topic != NULL_TOPIC
    }
}

/// One conversation: profile, knowledge, turns, the annotated plan steps
/// and (after target creation) the designated target step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DialogueSample {
    pub id: String,
    pub profile: UserProfile,
    pub knowledge: Vec<KnowledgeTriple>,
    pub turns: Vec<Turn>,
    pub plans: Vec<PlanStep>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target: Option<PlanStep>,
}

impl DialogueSample {
    /// Structural invariants: non-empty plans, alternating roles, non-empty
    /// triple fields, and every non-NULL plan topic grounded in the
    /// knowledge triples.
    pub fn validate(&self) -> Result<(), CorpusError> {
        let fail = |message: String| CorpusError::Validation {
            id: self.id.clone(),
            message,
        };
        if self.plans.is_empty() {
            return Err(fail("plans must be non-empty".into()));
        }
        for (key, _) in &self.profile.entries {
            if key.is_empty() {
                return Err(fail("profile keys must be non-empty".into()));
            }
        }
        for t in &self.knowledge {
            if t.subject.is_empty() || t.relation.is_empty() || t.object.is_empty() {
                return Err(fail(format!(
                    "knowledge triple has an empty field: {t:?}"
                )));
            }
        }
        for pair in self.turns.windows(2) {
            if pair[0].role == pair[1].role {
                return Err(fail("turn roles must alternate".into()));
            }
        }
        for step in &self.plans {
            if step.action.is_empty() {
                return Err(fail("plan action must be non-empty".into()));
            }
            if step.has_topic() {
                let grounded = self
                    .knowledge
                    .iter()
                    .any(|t| t.subject == step.topic || t.object == step.topic);
                if !grounded {
                    return Err(fail(format!(
                        "plan topic `{}` not grounded in any knowledge triple",
                        step.topic
                    )));
                }
            }
        }
        Ok(())
    }

    /// Indices into `turns` of the system turns, in order.
    pub fn system_turn_indices(&self) -> Vec<usize> {
        self.turns
            .iter()
            .enumerate()
            .filter(|(_, t)| t.role == Role::System)
            .map(|(i, _)| i)
            .collect()
    }
}
